"""Training loop for rate-model U-Nets: by-hand conv gradients, SGD momentum.

Forward activations follow the selected mode (noisy rates while training,
deterministic rates for evaluation); every gradient uses the smooth
surrogate derivative.  The firing-rate band regularizer is folded into
the same backward pass.
"""

from dataclasses import dataclass, field

import numpy as np

from . import convops, netgraph, ratemodel
from .netgraph import ACT_SPIKING, KIND_CONCAT, KIND_CONV_S2, KIND_DECONV, KIND_ENCODER, KIND_OUTPUT

MODE_TRAIN = "train-noisy"
MODE_EVAL = "eval-rate"
MODE_SURROGATE = "eval-backward"  # surrogate curve run forward: gradient checks

_MODES = (MODE_TRAIN, MODE_EVAL, MODE_SURROGATE)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 1e-4
    momentum: float = 0.9
    seed: int = 0
    noise: bool = True
    reg: ratemodel.RegularizerParams = field(default_factory=ratemodel.RegularizerParams)


@dataclass
class ForwardState:
    mode: str
    images: np.ndarray
    preact: dict   # layer -> drive tensor (b, h, w, c)
    act: dict      # layer -> activation passed downstream
    rates: dict    # spiking layers only, Hz
    logits: np.ndarray


@dataclass
class EvalResult:
    pixel_accuracy: float
    mean_iou: float
    layer_p99: dict  # layer -> pooled 99th-percentile rate, Hz


def _neuron_params(graph: netgraph.NetworkGraph) -> ratemodel.RateNeuronParams:
    return ratemodel.RateNeuronParams(dt=graph.dt, tau=graph.tau_s,
                                      amplitude=graph.amplitude)


def _layer_input(graph, layer, act, images):
    if layer.kind == KIND_ENCODER:
        return images[..., None]
    if layer.kind == KIND_CONCAT:
        parts = [convops.center_crop(act[src], layer.out_shape.h, layer.out_shape.w)
                 for src in layer.inputs]
        return np.concatenate(parts, axis=3)
    return act[layer.inputs[0]]


def forward_pass(graph: netgraph.NetworkGraph, images: np.ndarray, mode: str,
                 rng=None) -> ForwardState:
    """Run the network on a batch of images (b, h, w); keeps all tensors.

    train-noisy draws one phase sample per neuron per image from rng;
    eval-rate uses the deterministic rate; eval-backward runs the smooth
    surrogate forward so finite differences see the differentiated surface.
    """
    if mode not in _MODES:
        raise ValueError(f"unknown mode '{mode}'")
    if mode == MODE_TRAIN and rng is None:
        raise ValueError("train-noisy mode needs an rng for phase samples")
    enc = graph.layers[0]
    if images.ndim != 3 or images.shape[1:] != (enc.in_shape.h, enc.in_shape.w):
        raise ValueError(
            f"expected images (b, {enc.in_shape.h}, {enc.in_shape.w}), got {images.shape}"
        )
    images = images.astype(np.float64)
    params = _neuron_params(graph)
    preact, act, rates = {}, {}, {}
    logits = None
    for name in netgraph.topo_order(graph):
        layer = graph.layer(name)
        inp = _layer_input(graph, layer, act, images)
        if layer.kind == KIND_CONCAT:
            act[name] = inp
            continue
        if layer.kind == KIND_DECONV:
            x = convops.deconv_forward(inp, layer.weights)
        else:
            stride = 2 if layer.kind == KIND_CONV_S2 else 1
            x = convops.conv_forward(inp, layer.weights, stride)
        x = x + layer.bias
        preact[name] = x
        if layer.activation == ACT_SPIKING:
            if mode == MODE_EVAL:
                r = ratemodel.forward_rate(x, params)
            elif mode == MODE_SURROGATE:
                r = ratemodel.backward_rate(x, params)
            else:
                r = ratemodel.forward_rate_noisy(x, params, rng.random(x.shape))
            rates[name] = r
            act[name] = graph.amplitude * r
        else:
            act[name] = x
            if layer.kind == KIND_OUTPUT:
                logits = x
    return ForwardState(mode=mode, images=images, preact=preact, act=act,
                        rates=rates, logits=logits)


def normalize_init(graph: netgraph.NetworkGraph, images: np.ndarray,
                   drive_std: float = 100.0, drive_mean: float = 40.0,
                   logit_std: float = 1.0):
    """Match every layer's initial drive statistics on a probe batch.

    Fan-in bounds alone underestimate the gain of rate-coded layers at
    this depth, and the signal dies before reaching the head.  One pass in
    topological order rescales each weight tensor so the weight-driven
    part of the probe-batch drive has std drive_std, then sets the bias so
    every channel's mean drive is drive_mean and most units start alive.
    The head gets unit logit spread and a balanced prior.  Deterministic
    for a fixed probe batch.
    """
    if images.ndim != 3:
        raise ValueError(f"probe images must be (b, h, w), got {images.shape}")
    for name in netgraph.topo_order(graph):
        layer = graph.layer(name)
        if layer.kind == KIND_CONCAT:
            continue
        x = forward_pass(graph, images, MODE_EVAL).preact[name]
        xw = x - layer.bias  # weight-driven part only
        target = logit_std if layer.kind == KIND_OUTPUT else drive_std
        spread = float(xw.std())
        if spread <= 0.0:
            raise ValueError(f"layer '{name}' has zero drive spread")
        layer.weights *= target / spread
        chan_mean = xw.reshape(-1, x.shape[3]).mean(axis=0) * (target / spread)
        if layer.kind == KIND_OUTPUT:
            layer.bias[:] = -chan_mean
        else:
            layer.bias[:] = drive_mean - chan_mean
    return graph


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Per-pixel 2-class softmax CE, averaged; returns (loss, dlogits)."""
    if logits.shape[:3] != labels.shape:
        raise ValueError(f"logits {logits.shape} do not match labels {labels.shape}")
    z = logits - logits.max(axis=3, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=3, keepdims=True)
    onehot = np.stack([labels == 0, labels == 1], axis=3).astype(np.float64)
    npix = labels.size
    loss = float(-np.sum(onehot * np.log(np.maximum(probs, 1e-300))) / npix)
    dlogits = (probs - onehot) / npix
    return loss, dlogits


def regularizer_terms(state: ForwardState, reg: ratemodel.RegularizerParams):
    """Unweighted band-penalty loss summed over layers + per-layer rate grads."""
    total = 0.0
    grads = {}
    for name, r in state.rates.items():
        b = r.shape[0]
        loss, g = ratemodel.fr_reg_loss(r.reshape(b, -1), reg)
        total += loss
        grads[name] = g.reshape(r.shape)
    return total, grads


def backward_pass(graph: netgraph.NetworkGraph, state: ForwardState,
                  dlogits: np.ndarray, rate_grads: dict = None):
    """Backpropagate; returns {layer: (dweights, dbias)}.

    rate_grads, if given, adds direct (already weighted) gradients on the
    firing rates at each spiking layer -- the regularizer path.
    """
    params = _neuron_params(graph)
    order = netgraph.topo_order(graph)
    dact = {name: None for name in order}
    grads = {}

    def accumulate(name, g):
        dact[name] = g if dact[name] is None else dact[name] + g

    accumulate(order[-1], dlogits)
    for name in reversed(order):
        layer = graph.layer(name)
        d_out = dact[name]
        if layer.kind == KIND_CONCAT:
            if d_out is None:
                continue
            lo = 0
            for src in layer.inputs:
                s = graph.layer(src)
                part = d_out[..., lo:lo + s.out_shape.c]
                lo += s.out_shape.c
                if (s.out_shape.h, s.out_shape.w) != (layer.out_shape.h, layer.out_shape.w):
                    oy = (s.out_shape.h - layer.out_shape.h) // 2
                    ox = (s.out_shape.w - layer.out_shape.w) // 2
                    pad = np.zeros((part.shape[0], s.out_shape.h, s.out_shape.w,
                                    part.shape[3]), dtype=part.dtype)
                    pad[:, oy:oy + layer.out_shape.h, ox:ox + layer.out_shape.w, :] = part
                    part = pad
                accumulate(src, part)
            continue

        if layer.activation == ACT_SPIKING:
            drate = None if d_out is None else d_out * graph.amplitude
            if rate_grads is not None and name in rate_grads:
                extra = rate_grads[name]
                drate = extra if drate is None else drate + extra
            if drate is None:
                continue
            dx = drate * ratemodel.backward_rate_grad(state.preact[name], params)
        else:
            if d_out is None:
                continue
            dx = d_out

        inp = _layer_input(graph, layer, state.act, state.images)
        if layer.kind == KIND_DECONV:
            dinp, dw, db = convops.deconv_backward(inp, layer.weights, dx)
        else:
            stride = 2 if layer.kind == KIND_CONV_S2 else 1
            dinp, dw, db = convops.conv_backward(inp, layer.weights, dx, stride)
        grads[name] = (dw, db)
        if layer.inputs:
            accumulate(layer.inputs[0], dinp)
    return grads


def compute_gradients(graph: netgraph.NetworkGraph, images: np.ndarray,
                      labels: np.ndarray, mode: str,
                      reg: ratemodel.RegularizerParams = None, rng=None):
    """Forward + loss + backward in one call.

    Returns (task_loss, reg_loss, grads, state).  reg_loss is unweighted;
    the training objective is task + reg.weight * reg_loss.
    """
    state = forward_pass(graph, images, mode, rng=rng)
    task_loss, dlogits = softmax_cross_entropy(state.logits, labels)
    reg_loss, rgrads = 0.0, None
    if reg is not None and reg.weight > 0:
        reg_loss, rgrads = regularizer_terms(state, reg)
        rgrads = {k: reg.weight * v for k, v in rgrads.items()}
    grads = backward_pass(graph, state, dlogits, rate_grads=rgrads)
    return task_loss, reg_loss, grads, state


def crop_labels(graph: netgraph.NetworkGraph, labels: np.ndarray) -> np.ndarray:
    """Center-crop full-size masks to the output head's spatial extent."""
    head = graph.layers[-1]
    return convops.center_crop(labels[..., None], head.out_shape.h,
                               head.out_shape.w)[..., 0]


def stack_dataset(dataset):
    images = np.stack([s.image for s in dataset]).astype(np.float64)
    labels = np.stack([s.label for s in dataset]).astype(np.int64)
    return images, labels


def train(graph: netgraph.NetworkGraph, dataset, config: TrainConfig):
    """SGD with momentum over shuffled minibatches; returns epoch history.

    History entries carry the mean task loss, mean (unweighted) reg loss,
    and training pixel accuracy of each epoch.  A non-finite loss aborts.
    """
    images, labels = stack_dataset(dataset)
    labels = crop_labels(graph, labels)
    n = images.shape[0]
    if n == 0:
        raise ValueError("empty training dataset")
    rng = np.random.default_rng(config.seed)
    mode = MODE_TRAIN if config.noise else MODE_SURROGATE
    velocity = {}
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        task_sum = reg_sum = acc_sum = 0.0
        nb = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            task, regl, grads, state = compute_gradients(
                graph, images[idx], labels[idx], mode, reg=config.reg, rng=rng
            )
            total = task + config.reg.weight * regl
            if not np.isfinite(total):
                raise TrainingDiverged(
                    f"non-finite loss {total} at epoch {epoch}, batch {nb}"
                )
            for name, (dw, db) in grads.items():
                layer = graph.layer(name)
                vw, vb = velocity.get(name, (np.zeros_like(dw), np.zeros_like(db)))
                vw = config.momentum * vw + dw
                vb = config.momentum * vb + db
                velocity[name] = (vw, vb)
                layer.weights -= config.learning_rate * vw
                layer.bias -= config.learning_rate * vb
            pred = state.logits.argmax(axis=3)
            acc_sum += float(np.mean(pred == labels[idx]))
            task_sum += task
            reg_sum += regl
            nb += 1
        history.append({
            "epoch": epoch,
            "task_loss": task_sum / nb,
            "reg_loss": reg_sum / nb,
            "pixel_accuracy": acc_sum / nb,
        })
    return history


def evaluate(graph: netgraph.NetworkGraph, dataset, batch_size: int = 16) -> EvalResult:
    """Deterministic rate-mode evaluation: accuracy, IoU, p99 layer rates.

    The per-layer statistic pools every (sample, neuron) rate and takes
    its 99th percentile, the same band the regularizer controls.
    """
    images, labels = stack_dataset(dataset)
    labels = crop_labels(graph, labels)
    preds = []
    pooled = {}
    for lo in range(0, images.shape[0], batch_size):
        state = forward_pass(graph, images[lo:lo + batch_size], MODE_EVAL)
        preds.append(state.logits.argmax(axis=3))
        for name, r in state.rates.items():
            pooled.setdefault(name, []).append(r.reshape(-1))
    preds = np.concatenate(preds)
    from . import data as _data
    return EvalResult(
        pixel_accuracy=_data.pixel_accuracy(preds, labels),
        mean_iou=_data.mean_iou(preds, labels),
        layer_p99={k: float(np.percentile(np.concatenate(v), 99.0))
                   for k, v in pooled.items()},
    )
