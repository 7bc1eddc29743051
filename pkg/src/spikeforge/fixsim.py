"""Bit-exact simulator of the fixed-point core dynamics.

Every quantity is an integer and every update matches the chip equations:
decays are (x * (4096 - delta)) >> 12 with an arithmetic shift, spikes fire
on v > v_th_bar (strict) with a hard reset to zero, and overflow saturates
with a diagnostic count instead of wrapping.

Neurons of a layer share their parameters and are independent, so the state
is stepped layer-major; per-core accounting (synaptic events, chip hops) is
reconstructed from the partition regions.  Spikes emitted at step t are
consumed at step t+1 (a lockstep barrier between all cores).

The input image enters the encoder as a constant synaptic current each
step; everything downstream is driven by spikes alone.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import netgraph, quantizer
from .partitioner import Partition

STATS_FORMAT = "spikeforge-stats"
STATS_VERSION = 1
RASTER_MAGIC = b"SPKR"


class FixsimError(ValueError):
    pass


@dataclass
class CoreState:
    """Integer compartment state for one block of neurons."""

    u: np.ndarray
    v: np.ndarray
    u_clamps: int = 0
    v_clamps: int = 0

    @classmethod
    def zeros(cls, shape):
        return cls(u=np.zeros(shape, dtype=np.int64),
                   v=np.zeros(shape, dtype=np.int64))


@dataclass
class StepParams:
    # v_th_bar None marks a non-spiking accumulator: v is left untouched
    # and the caller reads u + bias as the per-step drive.  delta_u = 4096
    # turns the current filter off (u holds exactly this step's drive),
    # which is how the encoder's direct-current input enters.
    delta_u: int
    delta_v: int
    v_th_bar: int
    bias: np.ndarray
    limits: quantizer.ChipLimits


@dataclass(frozen=True)
class SpikeRoute:
    """Spike traffic from one core into another under a single connection.

    window is the (y0, y1, x0, x1) half-open source rectangle whose spikes
    reach the destination core; channels is the source core's channel span.
    """

    src_core: int
    dst_core: int
    crosses_chip: bool
    window: tuple
    channels: tuple


@dataclass
class SpikeStats:
    steps: int
    layer_spikes: dict
    core_synops: np.ndarray
    intra_hops: int = 0
    inter_hops: int = 0
    u_clamps: int = 0
    v_clamps: int = 0
    neurons: int = 0


def step_core(state: CoreState, q, params: StepParams):
    """Advance one timestep given the weighted synaptic drive q.

    q must already include the mantissa sums and the exponent shift.
    Returns the boolean spike mask (all False for accumulators).
    """
    u = ((state.u * (4096 - params.delta_u)) >> 12) + q
    over = np.abs(u) > params.limits.u_max
    if over.any():
        state.u_clamps += int(over.sum())
        np.clip(u, -params.limits.u_max, params.limits.u_max, out=u)
    state.u = u
    if params.v_th_bar is None:
        return np.zeros(u.shape, dtype=bool)
    v = ((state.v * (4096 - params.delta_v)) >> 12) + u + params.bias
    spikes = v > params.v_th_bar
    v[spikes] = 0
    # flooring inhibited voltages at zero is ordinary dynamics; only the
    # high side counts as an overflow diagnostic
    over = v > params.limits.v_max
    if over.any():
        state.v_clamps += int(over.sum())
    np.clip(v, 0, params.limits.v_max, out=v)
    state.v = v
    return spikes


def encoder_current(image, lq, shape):
    """Constant per-step drive for the encoder layer.

    The image is applied as direct current, bypassing the u-decay filter
    (nothing spikes on the input path, so there is no train to smooth).
    The scaled conv output is rounded once, standing in for the input DAC.
    """
    if image.shape != (shape.h, shape.w):
        raise FixsimError(
            f"image shape {image.shape} does not match encoder "
            f"{(shape.h, shape.w)}")
    m = lq.mantissas.reshape(-1).astype(np.float64)
    drive = image[:, :, None] * m * 2.0 ** lq.exponent
    return quantizer.round_half_away(drive)


def _conv_int(spikes, m, stride):
    k = m.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(spikes, (k, k), axis=(0, 1))
    win = win[::stride, ::stride]
    return np.einsum("yxckl,klco->yxo", win, m, optimize=False)


def _deconv_int(spikes, m):
    prod = np.einsum("yxc,klco->yxklo", spikes, m, optimize=False)
    h, w = spikes.shape[:2]
    out = np.zeros((2 * h, 2 * w, m.shape[3]), dtype=np.int64)
    for ky in range(2):
        for kx in range(2):
            out[ky::2, kx::2] = prod[:, :, ky, kx]
    return out


def _shift(acc, exponent):
    if exponent >= 0:
        return acc << exponent
    return acc >> -exponent


def layer_drive(conns, spikes_prev, quant, dst):
    """Weighted, exponent-shifted drive into dst from last step's spikes."""
    total = None
    lq = quant.layers[dst.name]
    m = lq.mantissas.astype(np.int64)
    oh, ow = dst.out_shape.h, dst.out_shape.w
    for cn in conns:
        if cn.dst != dst.name:
            continue
        s = spikes_prev[cn.src]
        part = m[:, :, cn.cin_lo:cn.cin_hi, :]
        if cn.deconv:
            acc = _deconv_int(s, part)
        else:
            need_h = (oh - 1) * cn.stride + cn.kernel
            need_w = (ow - 1) * cn.stride + cn.kernel
            s = s[cn.crop_dy:cn.crop_dy + need_h,
                  cn.crop_dx:cn.crop_dx + need_w]
            acc = _conv_int(s, part, cn.stride)
        total = acc if total is None else total + acc
    if total is None:
        total = np.zeros((oh, ow, dst.out_shape.c), dtype=np.int64)
    return _shift(total, lq.exponent)


def _feed_window(b0, b1, kernel, stride, crop, deconv, src_len):
    """Half-open src interval feeding the dst range [b0, b1) on one axis."""
    if deconv:
        lo = max(-(-(b0 - kernel + 1) // stride), 0) + crop
        hi = (b1 - 1) // stride + crop
    else:
        lo = crop + b0 * stride
        hi = crop + (b1 - 1) * stride + kernel - 1
    return max(lo, 0), min(hi + 1, src_len)


def build_routes(graph, partition: Partition):
    """Per-connection core-to-core spike routes implied by the partition."""
    by_layer = partition.by_layer()
    chips = partition.assignment.chips
    routes = []
    for cn in netgraph.lowered_connections(graph):
        src_shape = graph.layer(cn.src).out_shape
        for b in by_layer.get(cn.dst, ()):
            rb = partition.cores[b]
            wy = _feed_window(rb.origin[0], rb.origin[0] + rb.extent[0],
                              cn.kernel, cn.stride, cn.crop_dy, cn.deconv,
                              src_shape.h)
            wx = _feed_window(rb.origin[1], rb.origin[1] + rb.extent[1],
                              cn.kernel, cn.stride, cn.crop_dx, cn.deconv,
                              src_shape.w)
            for a in by_layer.get(cn.src, ()):
                ra = partition.cores[a]
                y0 = max(wy[0], ra.origin[0])
                y1 = min(wy[1], ra.origin[0] + ra.extent[0])
                x0 = max(wx[0], ra.origin[1])
                x1 = min(wx[1], ra.origin[1] + ra.extent[1])
                if y0 < y1 and x0 < x1:
                    routes.append(SpikeRoute(
                        src_core=a, dst_core=b,
                        crosses_chip=chips[a] != chips[b],
                        window=(y0, y1, x0, x1),
                        channels=(ra.origin[2], ra.origin[2] + ra.extent[2])))
    return routes


def _coverage_counts(ssum, cn, dst_shape):
    """Per dst position: spiking source neurons inside its input window."""
    oh, ow = dst_shape.h, dst_shape.w
    if cn.deconv:
        rep = np.repeat(np.repeat(ssum, 2, axis=0), 2, axis=1)
        return rep[:oh, :ow]
    need_h = (oh - 1) * cn.stride + cn.kernel
    need_w = (ow - 1) * cn.stride + cn.kernel
    s = ssum[cn.crop_dy:cn.crop_dy + need_h, cn.crop_dx:cn.crop_dx + need_w]
    win = np.lib.stride_tricks.sliding_window_view(
        s, (cn.kernel, cn.kernel))[::cn.stride, ::cn.stride]
    return win.sum(axis=(2, 3))


def _check_consistent(graph, quant, partition):
    weighted = {l.name for l in graph.layers
                if l.kind != netgraph.KIND_CONCAT}
    if set(quant.layers) != weighted:
        raise FixsimError("quantization does not cover the graph layers")
    part_layers = {cr.layer for cr in partition.cores}
    if part_layers != weighted:
        off = sorted(weighted ^ part_layers)
        raise FixsimError(f"partition does not match the graph layers: {off}")
    for cr in partition.cores:
        s = graph.layer(cr.layer).out_shape
        if (cr.origin[0] + cr.extent[0] > s.h or
                cr.origin[1] + cr.extent[1] > s.w or
                cr.origin[2] + cr.extent[2] > s.c):
            raise FixsimError(f"core region exceeds layer {cr.layer}")


def run_inference(graph, quant, partition: Partition, image, steps: int,
                  raster_path=None):
    """Run the network for `steps` lockstep timesteps on one image.

    Returns (drive, stats): drive is the output head's per-step input
    current (steps, h, w, classes) and stats the traffic accounting.
    """
    if steps < 0:
        raise FixsimError("steps must be >= 0")
    _check_consistent(graph, quant, partition)
    conns = netgraph.lowered_connections(graph)
    order = [graph.layer(n) for n in netgraph.topo_order(graph)
             if graph.layer(n).kind != netgraph.KIND_CONCAT]
    spiking = [l for l in order if l.activation == netgraph.ACT_SPIKING]
    head = [l for l in order if l.kind == netgraph.KIND_OUTPUT]

    params = {}
    states = {}
    prev = {}
    for l in order:
        lq = quant.layers[l.name]
        shape = (l.out_shape.h, l.out_shape.w, l.out_shape.c)
        vth = lq.v_th_bar if l.activation == netgraph.ACT_SPIKING else None
        du = 4096 if l.kind == netgraph.KIND_ENCODER else quant.delta_u
        params[l.name] = StepParams(
            delta_u=du, delta_v=quant.delta_v, v_th_bar=vth,
            bias=lq.bias_bar.astype(np.int64)[None, None, :],
            limits=quant.limits)
        states[l.name] = CoreState.zeros(shape)
        prev[l.name] = np.zeros(shape, dtype=np.int64)

    enc = order[0]
    if enc.kind != netgraph.KIND_ENCODER:
        raise FixsimError("first layer must be the encoder")
    enc_q = encoder_current(np.asarray(image, dtype=np.float64),
                            quant.layers[enc.name], enc.in_shape)

    routes = build_routes(graph, partition)
    by_layer = partition.by_layer()
    core_of = {i: cr for i, cr in enumerate(partition.cores)}
    routes_by_src = {}
    for rt in routes:
        routes_by_src.setdefault(core_of[rt.src_core].layer, []).append(rt)

    n_cores = len(partition.cores)
    core_synops = np.zeros(n_cores, dtype=np.int64)
    layer_spikes = {l.name: np.zeros(steps, dtype=np.int64) for l in spiking}
    intra = inter = 0
    out_shape = head[0].out_shape if head else None
    drive = np.zeros((steps,) + ((out_shape.h, out_shape.w, out_shape.c)
                                 if head else (0,)), dtype=np.int64)
    raster = [] if raster_path else None
    core_grid = _core_grids(graph, partition) if raster_path else None

    for t in range(steps):
        # deliveries of last step's spikes: synaptic events and chip hops
        for cn in conns:
            s = prev[cn.src]
            if not s.any():
                continue
            dst = graph.layer(cn.dst)
            cnt = _coverage_counts(s.sum(axis=2), cn, dst.out_shape)
            for b in by_layer[cn.dst]:
                rb = partition.cores[b]
                block = cnt[rb.origin[0]:rb.origin[0] + rb.extent[0],
                            rb.origin[1]:rb.origin[1] + rb.extent[1]]
                core_synops[b] += int(block.sum()) * rb.extent[2]
        for name, s in prev.items():
            if not s.any():
                continue
            for rt in routes_by_src.get(name, ()):
                y0, y1, x0, x1 = rt.window
                c0, c1 = rt.channels
                n = int(s[y0:y1, x0:x1, c0:c1].sum())
                if rt.crosses_chip:
                    inter += n
                else:
                    intra += n

        new = {}
        for l in spiking:
            if l.kind == netgraph.KIND_ENCODER:
                q = enc_q
            else:
                q = layer_drive(conns, prev, quant, l)
            spikes = step_core(states[l.name], q, params[l.name])
            layer_spikes[l.name][t] = int(spikes.sum())
            new[l.name] = spikes.astype(np.int64)
            if raster is not None and spikes.any():
                grid_core, grid_local = core_grid[l.name]
                for flat in np.flatnonzero(spikes):
                    raster.append((t, int(grid_core.flat[flat]),
                                   int(grid_local.flat[flat])))
        for l in head:
            q = layer_drive(conns, prev, quant, l)
            step_core(states[l.name], q, params[l.name])
            drive[t] = states[l.name].u + params[l.name].bias
            new[l.name] = np.zeros_like(prev[l.name])
        prev = new

    stats = SpikeStats(
        steps=steps,
        layer_spikes=layer_spikes,
        core_synops=core_synops,
        intra_hops=intra,
        inter_hops=inter,
        u_clamps=sum(st.u_clamps for st in states.values()),
        v_clamps=sum(st.v_clamps for st in states.values()),
        neurons=sum(cr.volume for cr in partition.cores))
    if raster_path:
        _write_raster(raster_path, raster)
    return drive, stats


def _core_grids(graph, partition: Partition):
    """Per layer: core index and in-core local index for every neuron."""
    grids = {}
    for name, ids in partition.by_layer().items():
        s = graph.layer(name).out_shape
        core = np.full((s.h, s.w, s.c), -1, dtype=np.int32)
        local = np.zeros((s.h, s.w, s.c), dtype=np.int32)
        for i in ids:
            cr = partition.cores[i]
            y0, x0, c0 = cr.origin
            q, r, sc = cr.extent
            core[y0:y0 + q, x0:x0 + r, c0:c0 + sc] = i
            idx = np.arange(cr.volume, dtype=np.int32).reshape(q, r, sc)
            local[y0:y0 + q, x0:x0 + r, c0:c0 + sc] = idx
        grids[name] = (core, local)
    return grids


def _write_raster(path, events):
    arr = np.array(events, dtype="<u4").reshape(-1, 3)
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(np.array([len(arr)], dtype="<u4").tobytes())
        fh.write(arr.tobytes())


def read_raster(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != RASTER_MAGIC:
        raise FixsimError(f"{path}: not a raster file")
    n = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    return np.frombuffer(raw[8:], dtype="<u4").reshape(n, 3)


def decode_output(drive, window: int):
    """Binary mask from the head drive: argmax over the final window steps.

    Ties fall to class 0.
    """
    steps = drive.shape[0]
    if window < 1 or window > steps:
        raise FixsimError(f"window {window} outside 1..{steps}")
    acc = drive[steps - window:].sum(axis=0)
    return (acc[:, :, 1] > acc[:, :, 0]).astype(np.int64)


def mean_rates(stats: SpikeStats, graph, window: int, dt: float):
    """Per-layer mean firing rate in Hz over the final window steps."""
    if window < 1 or window > stats.steps:
        raise FixsimError(f"window {window} outside 1..{stats.steps}")
    rates = {}
    for name, counts in stats.layer_spikes.items():
        s = graph.layer(name).out_shape
        n = s.h * s.w * s.c
        rates[name] = float(counts[stats.steps - window:].sum()) \
            / (n * window * dt)
    return rates


def save_stats(stats: SpikeStats, path):
    doc = {
        "format": STATS_FORMAT,
        "version": STATS_VERSION,
        "steps": stats.steps,
        "layer_spikes": {k: [int(x) for x in v]
                         for k, v in stats.layer_spikes.items()},
        "core_synops": [int(x) for x in stats.core_synops],
        "intra_hops": stats.intra_hops,
        "inter_hops": stats.inter_hops,
        "u_clamps": stats.u_clamps,
        "v_clamps": stats.v_clamps,
        "neurons": stats.neurons,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_stats(path) -> SpikeStats:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != STATS_FORMAT:
        raise FixsimError(f"{path}: not a stats file")
    return SpikeStats(
        steps=doc["steps"],
        layer_spikes={k: np.array(v, dtype=np.int64)
                      for k, v in doc["layer_spikes"].items()},
        core_synops=np.array(doc["core_synops"], dtype=np.int64),
        intra_hops=doc["intra_hops"],
        inter_hops=doc["inter_hops"],
        u_clamps=doc["u_clamps"],
        v_clamps=doc["v_clamps"],
        neurons=doc["neurons"])
