"""Layer graph for scaled U-Nets and its on-disk form.

A graph is a DAG of layers.  Convolutions are non-padded, downsampling is
a stride-2 convolution, upsampling is a 2x2 stride-2 deconvolution, and
skip paths meet the upsampled stream in a concat layer that center-crops
its wider inputs.  Weights live in a SPKF tensor container; the graph
document is JSON and records byte offsets into that container.
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import blob

KIND_ENCODER = "input-encoder-1x1"
KIND_CONV = "conv3x3"
KIND_CONV_S2 = "conv3x3-stride2"
KIND_DECONV = "deconv2x2-stride2"
KIND_CONCAT = "concat"
KIND_OUTPUT = "output-1x1"

ACT_SPIKING = "spiking-relu"
ACT_NONE = "none"

# kind -> (kernel, stride) for the ordinary convolution kinds
_CONV_GEOM = {
    KIND_ENCODER: (1, 1),
    KIND_CONV: (3, 1),
    KIND_CONV_S2: (3, 2),
    KIND_OUTPUT: (1, 1),
}

GRAPH_FORMAT = "spikeforge-graph"
GRAPH_VERSION = 1


class GraphBuildError(ValueError):
    pass


@dataclass(frozen=True)
class TensorShape:
    h: int
    w: int
    c: int

    def __post_init__(self):
        if min(self.h, self.w, self.c) < 1:
            raise GraphBuildError(f"tensor shape must be positive, got {self}")

    @property
    def size(self) -> int:
        return self.h * self.w * self.c

    def as_tuple(self):
        return (self.h, self.w, self.c)


@dataclass
class LayerSpec:
    name: str
    kind: str
    in_shape: TensorShape
    out_shape: TensorShape
    inputs: tuple = ()
    weights: np.ndarray = None
    bias: np.ndarray = None
    activation: str = ACT_SPIKING


@dataclass
class NetworkGraph:
    layers: list
    dt: float
    tau_s: float
    amplitude: float = 1.0 / 200.0
    _by_name: dict = field(init=False, repr=False)

    def __post_init__(self):
        self._by_name = {l.name: l for l in self.layers}
        if len(self._by_name) != len(self.layers):
            raise GraphBuildError("duplicate layer names")

    def layer(self, name: str) -> LayerSpec:
        return self._by_name[name]

    @property
    def edges(self):
        return [(src, l.name) for l in self.layers for src in l.inputs]


def crop_offsets(src: TensorShape, dst_h: int, dst_w: int):
    """Top-left offsets of a center crop from src spatial dims to (dst_h, dst_w)."""
    if src.h < dst_h or src.w < dst_w:
        raise GraphBuildError(f"cannot crop {src.h}x{src.w} down to {dst_h}x{dst_w}")
    return (src.h - dst_h) // 2, (src.w - dst_w) // 2


def _conv_out(side: int, kernel: int, stride: int) -> int:
    return (side - kernel) // stride + 1


def _expected_out(layer: LayerSpec) -> TensorShape:
    s = layer.in_shape
    if layer.kind in _CONV_GEOM:
        k, st = _CONV_GEOM[layer.kind]
        return TensorShape(_conv_out(s.h, k, st), _conv_out(s.w, k, st), layer.out_shape.c)
    if layer.kind == KIND_DECONV:
        return TensorShape(2 * s.h, 2 * s.w, layer.out_shape.c)
    if layer.kind == KIND_CONCAT:
        return TensorShape(s.h, s.w, s.c)
    raise GraphBuildError(f"unknown layer kind '{layer.kind}'")


def _weight_shape(layer: LayerSpec):
    cin, cout = layer.in_shape.c, layer.out_shape.c
    if layer.kind == KIND_ENCODER:
        return (1, 1, 1, cout)
    if layer.kind in (KIND_CONV, KIND_CONV_S2):
        return (3, 3, cin, cout)
    if layer.kind == KIND_DECONV:
        return (2, 2, cin, cout)
    if layer.kind == KIND_OUTPUT:
        return (1, 1, cin, cout)
    return None


def topo_order(graph: NetworkGraph):
    """Layer names in topological order; raises GraphBuildError on a cycle."""
    indeg = {l.name: 0 for l in graph.layers}
    consumers = {l.name: [] for l in graph.layers}
    for l in graph.layers:
        for src in l.inputs:
            if src not in indeg:
                raise GraphBuildError(f"layer '{l.name}' references unknown input '{src}'")
            indeg[l.name] += 1
            consumers[src].append(l.name)
    ready = [n for n in indeg if indeg[n] == 0]
    order = []
    while ready:
        n = ready.pop(0)
        order.append(n)
        for m in consumers[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                ready.append(m)
    if len(order) != len(graph.layers):
        raise GraphBuildError("layer graph contains a cycle")
    return order


def validate(graph: NetworkGraph):
    """Structural checks; returns a list of violation strings (empty if clean)."""
    problems = []
    if graph.dt <= 0:
        problems.append(f"dt must be positive, got {graph.dt}")
    if graph.tau_s <= 0:
        problems.append(f"tau_s must be positive, got {graph.tau_s}")
    if graph.amplitude <= 0:
        problems.append(f"amplitude must be positive, got {graph.amplitude}")
    try:
        topo_order(graph)
    except GraphBuildError as e:
        problems.append(str(e))
        return problems

    for l in graph.layers:
        if l.kind == KIND_CONCAT:
            if len(l.inputs) < 2:
                problems.append(f"concat '{l.name}' needs at least two inputs")
                continue
            srcs = [graph.layer(s) for s in l.inputs]
            if any(s.kind == KIND_CONCAT for s in srcs):
                problems.append(f"concat '{l.name}' may not consume another concat")
            th = min(s.out_shape.h for s in srcs)
            tw = min(s.out_shape.w for s in srcs)
            tc = sum(s.out_shape.c for s in srcs)
            if (l.out_shape.h, l.out_shape.w, l.out_shape.c) != (th, tw, tc):
                problems.append(
                    f"concat '{l.name}': expected out {th}x{tw}x{tc}, got {l.out_shape}"
                )
            if l.in_shape != l.out_shape:
                problems.append(f"concat '{l.name}': in_shape must equal out_shape")
            if l.activation != ACT_NONE or l.weights is not None or l.bias is not None:
                problems.append(f"concat '{l.name}' is routing only: no weights/activation")
            continue

        if l.kind == KIND_ENCODER:
            if l.inputs:
                problems.append(f"encoder '{l.name}' reads the image and takes no inputs")
            if l.in_shape.c != 1:
                problems.append(f"encoder '{l.name}' expects a single input channel")
        else:
            if len(l.inputs) != 1:
                problems.append(f"layer '{l.name}' must have exactly one input")
            elif graph.layer(l.inputs[0]).out_shape != l.in_shape:
                problems.append(
                    f"layer '{l.name}': in_shape {l.in_shape} does not match "
                    f"producer '{l.inputs[0]}' out_shape {graph.layer(l.inputs[0]).out_shape}"
                )
        try:
            expect = _expected_out(l)
        except GraphBuildError as e:
            problems.append(str(e))
            continue
        if expect != l.out_shape:
            problems.append(f"layer '{l.name}': expected out {expect}, got {l.out_shape}")
        wshape = _weight_shape(l)
        if l.weights is None or l.weights.shape != wshape:
            problems.append(f"layer '{l.name}': weights must have shape {wshape}")
        if l.bias is None or l.bias.shape != (l.out_shape.c,):
            problems.append(f"layer '{l.name}': bias must have shape ({l.out_shape.c},)")
        want_act = ACT_NONE if l.kind == KIND_OUTPUT else ACT_SPIKING
        if l.activation != want_act:
            problems.append(f"layer '{l.name}': activation must be '{want_act}'")
    return problems


def neuron_count(graph: NetworkGraph, include_output: bool = False) -> int:
    """Spiking neurons in the graph; concat routes and contributes none.

    The non-spiking output head is excluded unless include_output is set.
    """
    total = 0
    for l in graph.layers:
        if l.activation == ACT_SPIKING:
            total += l.out_shape.size
        elif include_output and l.kind == KIND_OUTPUT:
            total += l.out_shape.size
    return total


def param_count(graph: NetworkGraph) -> int:
    total = 0
    for l in graph.layers:
        if l.weights is not None:
            total += l.weights.size
        if l.bias is not None:
            total += l.bias.size
    return total


def _fan_in(kind: str, cin: int) -> int:
    # deconv with 2x2 kernel and stride 2: each output sees exactly one input pixel
    if kind == KIND_DECONV:
        return cin
    k, _ = _CONV_GEOM[kind]
    return k * k * cin


def _init_layer(layer: LayerSpec, rng, amplitude: float):
    wshape = _weight_shape(layer)
    fan = _fan_in(layer.kind, layer.in_shape.c if layer.kind != KIND_ENCODER else 1)
    bound = math.sqrt(6.0 / fan)
    if layer.activation == ACT_SPIKING:
        # the spiking activation has slope ~amplitude, so the He-style bound
        # is divided by it to keep signal variance flat across layers
        bound /= amplitude
    layer.weights = rng.uniform(-bound, bound, size=wshape)
    layer.bias = np.zeros(layer.out_shape.c)


def build_unet(
    input_size: int,
    base_channels: int,
    meta_layers: int,
    dt: float = 0.001,
    tau_s: float = 0.005,
    *,
    encoder_channels: int = 3,
    amplitude: float = 1.0 / 200.0,
    seed: int = 0,
) -> NetworkGraph:
    """Build a scaled-down U-Net over a square single-channel input.

    Every meta-layer holds two 3x3 convolutions per direction; scales are
    bridged by a stride-2 convolution going down and a 2x2 deconvolution
    going up, with a center-cropped skip concat at each merge.  Channel
    width doubles per meta-layer starting from base_channels.  Weight init
    is fan-in-scaled centered uniform, deterministic for a fixed seed.
    """
    if input_size < 1 or base_channels < 1 or meta_layers < 1:
        raise GraphBuildError("input_size, base_channels, meta_layers must be >= 1")
    if encoder_channels < 1:
        raise GraphBuildError("encoder_channels must be >= 1")

    layers = []

    def add(name, kind, in_shape, out_shape, inputs, activation=ACT_SPIKING):
        if min(out_shape) < 1:
            raise GraphBuildError(
                f"layer '{name}': spatial dimension underflow, output would be "
                f"{out_shape[0]}x{out_shape[1]}x{out_shape[2]}"
            )
        layers.append(
            LayerSpec(
                name=name,
                kind=kind,
                in_shape=TensorShape(*in_shape),
                out_shape=TensorShape(*out_shape),
                inputs=tuple(inputs),
                activation=activation,
            )
        )
        return out_shape

    def ch(i):
        return base_channels * (1 << (i - 1))

    s = add("enc", KIND_ENCODER, (input_size, input_size, 1),
            (input_size, input_size, encoder_channels), ())
    prev = "enc"
    skips = {}
    for i in range(1, meta_layers + 1):
        if i > 1:
            s = add(f"d{i}", KIND_CONV_S2, s,
                    (_conv_out(s[0], 3, 2), _conv_out(s[1], 3, 2), ch(i)), (prev,))
            prev = f"d{i}"
        s = add(f"c{i}a", KIND_CONV, s, (s[0] - 2, s[1] - 2, ch(i)), (prev,))
        s = add(f"c{i}b", KIND_CONV, s, (s[0] - 2, s[1] - 2, ch(i)), (f"c{i}a",))
        prev = f"c{i}b"
        skips[i] = (prev, s)
    for i in range(meta_layers - 1, 0, -1):
        s = add(f"u{i}", KIND_DECONV, s, (2 * s[0], 2 * s[1], ch(i)), (prev,))
        skip_name, skip_shape = skips[i]
        if skip_shape[0] < s[0] or skip_shape[1] < s[1]:
            raise GraphBuildError(
                f"layer 'cat{i}': skip '{skip_name}' is {skip_shape[0]}x{skip_shape[1]}, "
                f"smaller than the upsampled {s[0]}x{s[1]} stream"
            )
        s = add(f"cat{i}", KIND_CONCAT, (s[0], s[1], 2 * ch(i)), (s[0], s[1], 2 * ch(i)),
                (f"u{i}", skip_name), activation=ACT_NONE)
        s = add(f"e{i}a", KIND_CONV, s, (s[0] - 2, s[1] - 2, ch(i)), (f"cat{i}",))
        s = add(f"e{i}b", KIND_CONV, s, (s[0] - 2, s[1] - 2, ch(i)), (f"e{i}a",))
        prev = f"e{i}b"
    add("out", KIND_OUTPUT, s, (s[0], s[1], 2), (prev,), activation=ACT_NONE)

    graph = NetworkGraph(layers=layers, dt=dt, tau_s=tau_s, amplitude=amplitude)
    rng = np.random.default_rng(seed)
    for l in graph.layers:
        if l.kind != KIND_CONCAT:
            _init_layer(l, rng, amplitude)
    problems = validate(graph)
    if problems:
        raise GraphBuildError("built an inconsistent graph: " + "; ".join(problems))
    return graph


@dataclass(frozen=True)
class Connection:
    """One lowered producer->consumer link with concat routing folded in.

    src spikes enter dst's input-channel window [cin_lo, cin_hi) after the
    source plane is cropped by (crop_dy, crop_dx).  kernel/stride describe
    dst's convolution; deconv is flagged separately.
    """

    src: str
    dst: str
    kernel: int
    stride: int
    deconv: bool
    crop_dy: int
    crop_dx: int
    cin_lo: int
    cin_hi: int


def lowered_connections(graph: NetworkGraph):
    """Connections of every weighted layer with concat layers routed away."""
    conns = []
    for l in graph.layers:
        if l.kind in (KIND_CONCAT, KIND_ENCODER):
            continue
        if l.kind == KIND_DECONV:
            kernel, stride, deconv = 2, 2, True
        else:
            k, st = _CONV_GEOM[l.kind]
            kernel, stride, deconv = k, st, False
        (src_name,) = l.inputs
        src = graph.layer(src_name)
        if src.kind == KIND_CONCAT:
            lo = 0
            for part_name in src.inputs:
                part = graph.layer(part_name)
                dy, dx = crop_offsets(part.out_shape, src.out_shape.h, src.out_shape.w)
                conns.append(Connection(part_name, l.name, kernel, stride, deconv,
                                        dy, dx, lo, lo + part.out_shape.c))
                lo += part.out_shape.c
        else:
            conns.append(Connection(src_name, l.name, kernel, stride, deconv,
                                    0, 0, 0, src.out_shape.c))
    return conns


def _shape_to_json(s: TensorShape):
    return [s.h, s.w, s.c]


def save_graph(graph: NetworkGraph, graph_path: str, blob_path: str):
    """Write the JSON graph document and the SPKF weight container."""
    tensors = {}
    for l in graph.layers:
        if l.weights is not None:
            tensors[f"{l.name}/weights"] = l.weights.astype("<f4")
            tensors[f"{l.name}/bias"] = l.bias.astype("<f4")
    offsets = blob.write_blob(blob_path, tensors)

    doc = {
        "format": GRAPH_FORMAT,
        "version": GRAPH_VERSION,
        "dt": graph.dt,
        "tau_s": graph.tau_s,
        "amplitude": graph.amplitude,
        "weight_blob": os.path.basename(blob_path),
        "layers": [],
        "edges": graph.edges,
    }
    for l in graph.layers:
        entry = {
            "name": l.name,
            "kind": l.kind,
            "in_shape": _shape_to_json(l.in_shape),
            "out_shape": _shape_to_json(l.out_shape),
            "inputs": list(l.inputs),
            "activation": l.activation,
            "weights": None,
            "bias": None,
        }
        if l.weights is not None:
            entry["weights"] = {
                "tensor": f"{l.name}/weights",
                "shape": list(l.weights.shape),
                "offset": offsets[f"{l.name}/weights"],
            }
            entry["bias"] = {
                "tensor": f"{l.name}/bias",
                "shape": list(l.bias.shape),
                "offset": offsets[f"{l.name}/bias"],
            }
        doc["layers"].append(entry)
    with open(graph_path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_graph(graph_path: str) -> NetworkGraph:
    with open(graph_path) as fh:
        doc = json.load(fh)
    if doc.get("format") != GRAPH_FORMAT:
        raise GraphBuildError(f"{graph_path}: not a graph document")
    if doc.get("version") != GRAPH_VERSION:
        raise GraphBuildError(f"{graph_path}: unsupported graph version {doc.get('version')}")
    blob_path = os.path.join(os.path.dirname(os.path.abspath(graph_path)), doc["weight_blob"])
    tensors = blob.read_blob(blob_path)
    directory = blob.read_directory(blob_path)

    layers = []
    for entry in doc["layers"]:
        weights = bias = None
        if entry["weights"] is not None:
            tname = entry["weights"]["tensor"]
            if directory[tname][2] != entry["weights"]["offset"]:
                raise GraphBuildError(f"{graph_path}: stale offset for tensor '{tname}'")
            weights = tensors[tname].astype(np.float64)
            bias = tensors[entry["bias"]["tensor"]].astype(np.float64)
        layers.append(
            LayerSpec(
                name=entry["name"],
                kind=entry["kind"],
                in_shape=TensorShape(*entry["in_shape"]),
                out_shape=TensorShape(*entry["out_shape"]),
                inputs=tuple(entry["inputs"]),
                weights=weights,
                bias=bias,
                activation=entry["activation"],
            )
        )
    return NetworkGraph(
        layers=layers,
        dt=doc["dt"],
        tau_s=doc["tau_s"],
        amplitude=doc["amplitude"],
    )
