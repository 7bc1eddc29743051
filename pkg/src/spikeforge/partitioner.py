"""Core splitting and two-chip placement.

Stage 1 tiles each layer's h x w x c neuron volume into core-sized regions
that respect the per-core neuron/axon/synapse budgets.  Stage 2 treats the
cores as a weighted graph (edge weight = axons between two cores) and
bipartitions it to keep inter-chip traffic small.
"""

import json
import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass

import numpy as np

from . import netgraph

log = logging.getLogger(__name__)

PARTITION_FORMAT = "spikeforge-partition"
PARTITION_VERSION = 1


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class CoreBudget:
    """Per-core capacity limits.

    Neuron capacity matches the target hardware; the axon and synapse
    numbers are configurable placeholders.  Out-axons are charged as
    neurons * efferent connection count (the downstream tiling is unknown
    while a layer is being split) and synapse memory as one entry per
    axon/target pair, ignoring compressed encodings.
    """

    max_neurons: int = 1024
    max_in_axons: int = 4096
    max_out_axons: int = 4096
    max_synapse_memory: int = 2 ** 17

    def __post_init__(self):
        for name in ("max_neurons", "max_in_axons",
                     "max_out_axons", "max_synapse_memory"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class CoreRegion:
    """A q x r x s block of one layer's neuron volume assigned to a core."""

    layer: str
    origin: tuple
    extent: tuple

    @property
    def volume(self) -> int:
        q, r, s = self.extent
        return q * r * s


@dataclass(frozen=True)
class ChipAssignment:
    chips: tuple
    tolerance: float
    relaxed: bool = False


@dataclass(frozen=True)
class Partition:
    budget: CoreBudget
    cores: tuple
    assignment: ChipAssignment

    def by_layer(self):
        out = defaultdict(list)
        for i, cr in enumerate(self.cores):
            out[cr.layer].append(i)
        return dict(out)


@dataclass
class CoreGraph:
    """Undirected core graph; edges keyed (u, v) with u < v, weight >= 1."""

    cores: list
    edges: dict

    @property
    def n(self) -> int:
        return len(self.cores)


def _src_window(o: int, kernel: int, stride: int, crop: int, deconv: bool):
    """Inclusive source index range read by dst position o along one axis."""
    if deconv:
        lo = -(-(o - kernel + 1) // stride)
        return crop + max(lo, 0), crop + o // stride
    return crop + o * stride, crop + o * stride + kernel - 1


def axon_count(region_a: CoreRegion, region_b: CoreRegion, conn) -> int:
    """Axons from region_a (source layer) into region_b (destination layer).

    One axon per source neuron whose footprint touches region_b.  The dst
    channel extent is irrelevant: every output channel reads the full input
    window, so the source neuron set is determined spatially.
    """
    spatial = 1
    for ax in (0, 1):
        crop = conn.crop_dy if ax == 0 else conn.crop_dx
        a0 = region_a.origin[ax]
        a1 = a0 + region_a.extent[ax]
        b0 = region_b.origin[ax]
        b1 = b0 + region_b.extent[ax]
        covered = 0
        last = a0 - 1
        for o in range(b0, b1):
            lo, hi = _src_window(o, conn.kernel, conn.stride, crop, conn.deconv)
            lo = max(lo, last + 1)
            hi = min(hi, a1 - 1)
            if hi >= lo:
                covered += hi - lo + 1
                last = hi
        spatial *= covered
        if spatial == 0:
            return 0
    return spatial * region_a.extent[2]


def synapse_entries(region_a: CoreRegion, region_b: CoreRegion, conn) -> int:
    """Weight-memory entries region_a contributes to region_b's core."""
    pairs = 1
    for ax in (0, 1):
        crop = conn.crop_dy if ax == 0 else conn.crop_dx
        a0 = region_a.origin[ax]
        a1 = a0 + region_a.extent[ax]
        b0 = region_b.origin[ax]
        b1 = b0 + region_b.extent[ax]
        total = 0
        for o in range(b0, b1):
            lo, hi = _src_window(o, conn.kernel, conn.stride, crop, conn.deconv)
            lo = max(lo, a0)
            hi = min(hi, a1 - 1)
            if hi >= lo:
                total += hi - lo + 1
        pairs *= total
        if pairs == 0:
            return 0
    return pairs * region_a.extent[2] * region_b.extent[2]


def _axis_pieces(length: int, step: int):
    return [(i, min(i + step, length)) for i in range(0, length, step)]


def _axis_tables(pieces, lo, hi):
    """Per tile: (#distinct source positions, #source->dst pairs)."""
    f, e = [], []
    for p0, p1 in pieces:
        cover = 0
        pairs = 0
        last = -1
        for o in range(p0, p1):
            l, h = lo[o], hi[o]
            if h < l:
                continue
            pairs += h - l + 1
            l = max(l, last + 1)
            if h >= l:
                cover += h - l + 1
                last = h
        f.append(cover)
        e.append(pairs)
    return np.array(f, dtype=np.int64), np.array(e, dtype=np.int64)


def _clipped_windows(out_len, src_len, kernel, stride, crop, deconv):
    lo = np.empty(out_len, dtype=np.int64)
    hi = np.empty(out_len, dtype=np.int64)
    for o in range(out_len):
        l, h = _src_window(o, kernel, stride, crop, deconv)
        lo[o] = max(l, 0)
        hi[o] = min(h, src_len - 1)
    return lo, hi


def split_layer(shape, budget: CoreBudget, afferents=(), n_efferent: int = 1,
                name: str = "layer"):
    """Tile a layer into core regions, exhaustively over region sizes.

    afferents: (connection, src_shape) pairs feeding this layer.  Chooses
    the (q, r, s) with the fewest cores; ties prefer fewer neurons per core,
    then the lexicographically smallest extent.
    """
    if hasattr(shape, "h"):
        m, n, c = shape.h, shape.w, shape.c
    else:
        m, n, c = shape
    if min(m, n, c) < 1:
        raise PartitionError(f"{name}: empty shape {(m, n, c)}")

    windows = []
    for conn, src_shape in afferents:
        sh = (src_shape.h, src_shape.w, src_shape.c) \
            if hasattr(src_shape, "h") else tuple(src_shape)
        wy = _clipped_windows(m, sh[0], conn.kernel, conn.stride,
                              conn.crop_dy, conn.deconv)
        wx = _clipped_windows(n, sh[1], conn.kernel, conn.stride,
                              conn.crop_dx, conn.deconv)
        windows.append((wy, wx, sh[2]))

    ytabs = {q: [_axis_tables(_axis_pieces(m, q), *wy) for wy, _, _ in windows]
             for q in range(1, m + 1)}
    xtabs = {r: [_axis_tables(_axis_pieces(n, r), *wx) for _, wx, _ in windows]
             for r in range(1, n + 1)}

    best = None
    for q in range(1, m + 1):
        ny = len(_axis_pieces(m, q))
        for r in range(1, n + 1):
            nx = len(_axis_pieces(n, r))
            if windows:
                in_mat = sum(np.outer(ytabs[q][i][0], xtabs[r][i][0]) * cs
                             for i, (_, _, cs) in enumerate(windows))
                pair_mat = sum(np.outer(ytabs[q][i][1], xtabs[r][i][1]) * cs
                               for i, (_, _, cs) in enumerate(windows))
                max_in = int(in_mat.max())
                max_pairs = int(pair_mat.max())
            else:
                max_in = max_pairs = 0
            if max_in > budget.max_in_axons:
                continue
            for s in range(1, c + 1):
                neurons = q * r * min(s, c)
                if neurons > budget.max_neurons:
                    break
                if neurons * n_efferent > budget.max_out_axons:
                    break
                if max_pairs * min(s, c) > budget.max_synapse_memory:
                    break
                cores = ny * nx * len(_axis_pieces(c, s))
                key = (cores, q * r * s, q, r, s)
                if best is None or key < best:
                    best = key

    if best is None:
        raise PartitionError(
            f"{name}: no region size fits the budget {budget}")

    _, _, q, r, s = best
    regions = []
    for y0, y1 in _axis_pieces(m, q):
        for x0, x1 in _axis_pieces(n, r):
            for c0, c1 in _axis_pieces(c, s):
                regions.append(CoreRegion(name, (y0, x0, c0),
                                          (y1 - y0, x1 - x0, c1 - c0)))
    return regions


def layer_cores(graph, budget: CoreBudget):
    """Stage 1 over every weighted layer (concat nodes hold no neurons)."""
    conns = netgraph.lowered_connections(graph)
    eff = Counter(cn.src for cn in conns)
    cores = []
    for l in graph.layers:
        if l.kind == netgraph.KIND_CONCAT:
            continue
        aff = [(cn, graph.layer(cn.src).out_shape)
               for cn in conns if cn.dst == l.name]
        cores += split_layer(l.out_shape, budget, aff, eff[l.name],
                             name=l.name)
    return cores


def core_loads(graph, cores):
    """Per-core budget usage recomputed from the emitted regions.

    Independent of the tiling search; used to re-verify budgets.  The
    encoder takes its input off-graph, so it contributes no in-axons.
    """
    conns = netgraph.lowered_connections(graph)
    eff = Counter(cn.src for cn in conns)
    by_dst = defaultdict(list)
    for cn in conns:
        by_dst[cn.dst].append(cn)
    loads = []
    for cr in cores:
        in_ax = 0
        syn = 0
        for cn in by_dst[cr.layer]:
            src = graph.layer(cn.src).out_shape
            full = CoreRegion(cn.src, (0, 0, 0), (src.h, src.w, src.c))
            in_ax += axon_count(full, cr, cn)
            syn += synapse_entries(full, cr, cn)
        loads.append({"layer": cr.layer, "neurons": cr.volume,
                      "in_axons": in_ax,
                      "out_axons": cr.volume * eff[cr.layer],
                      "synapses": syn})
    return loads


def build_core_graph(graph, cores) -> CoreGraph:
    by_layer = defaultdict(list)
    for i, cr in enumerate(cores):
        by_layer[cr.layer].append(i)
    edges = {}
    for cn in netgraph.lowered_connections(graph):
        for a in by_layer[cn.src]:
            for b in by_layer[cn.dst]:
                w = axon_count(cores[a], cores[b], cn)
                if w:
                    key = (a, b) if a < b else (b, a)
                    edges[key] = edges.get(key, 0) + w
    return CoreGraph(cores=list(cores), edges=edges)


def edge_cut(core_graph: CoreGraph, assignment) -> int:
    chips = getattr(assignment, "chips", assignment)
    if len(chips) != core_graph.n:
        raise PartitionError("assignment length does not match core count")
    return sum(w for (u, v), w in core_graph.edges.items()
               if chips[u] != chips[v])


def naive_assignment(n: int):
    """Contiguous index-order split, first half on chip 0."""
    h = (n + 1) // 2
    return tuple([0] * h + [1] * (n - h))


def _adjacency(n, edges):
    adj = [dict() for _ in range(n)]
    for (u, v), w in edges.items():
        adj[u][v] = adj[u].get(v, 0) + int(w)
        adj[v][u] = adj[v].get(u, 0) + int(w)
    return adj


def _cut(adj, sides):
    tot = 0
    for u in range(len(adj)):
        for v, w in adj[u].items():
            if v > u and sides[u] != sides[v]:
                tot += w
    return tot


def _coarsen(adj, weights, order):
    """Heavy-edge matching; returns (coarse adj, coarse weights, node map)."""
    n = len(adj)
    mate = [-1] * n
    for u in order:
        if mate[u] >= 0:
            continue
        best_v, best_w = -1, 0
        for v, w in adj[u].items():
            if mate[v] < 0 and v != u and (w > best_w or
                                           (w == best_w and v < best_v)):
                best_v, best_w = v, w
        mate[u] = best_v if best_v >= 0 else u
        if best_v >= 0:
            mate[best_v] = u
    cmap = [-1] * n
    nxt = 0
    for u in range(n):
        if cmap[u] < 0:
            cmap[u] = nxt
            if mate[u] != u and mate[u] >= 0:
                cmap[mate[u]] = nxt
            nxt += 1
    cadj = [dict() for _ in range(nxt)]
    cw = [0] * nxt
    for u in range(n):
        cw[cmap[u]] += weights[u]
        for v, w in adj[u].items():
            cu, cv = cmap[u], cmap[v]
            if cu != cv:
                cadj[cu][cv] = cadj[cu].get(cv, 0) + w
    return cadj, cw, cmap


def _initial_sides(adj, weights, allow):
    n = len(adj)
    total = sum(weights)
    slack = max(allow, max(weights))
    if n <= 12:
        best = None
        for mask in range(2 ** (n - 1)):
            sides = [0] + [(mask >> i) & 1 for i in range(n - 1)]
            w1 = sum(w for s, w in zip(sides, weights) if s)
            if abs(total - 2 * w1) > slack:
                continue
            cut = _cut(adj, sides)
            if best is None or cut < best[0]:
                best = (cut, sides)
        return best[1]
    # greedy growth from the heaviest node
    seed = max(range(n), key=lambda u: (weights[u], -u))
    sides = [1] * n
    sides[seed] = 0
    w0 = weights[seed]
    while w0 * 2 < total - slack:
        cand = [u for u in range(n) if sides[u] == 1]
        pick = max(cand, key=lambda u: (sum(w for v, w in adj[u].items()
                                            if sides[v] == 0), -u))
        sides[pick] = 0
        w0 += weights[pick]
    return sides


def _fm_pass(adj, weights, sides, allow):
    """One Fiduccia-Mattheyses sweep; returns True if the cut improved."""
    n = len(adj)
    diff = sum(w if s == 0 else -w for s, w in zip(sides, weights))
    slack = max(allow, 2 * max(weights))
    gain = [sum(w if sides[v] != sides[u] else -w
                for v, w in adj[u].items()) for u in range(n)]
    locked = [False] * n
    moves = []
    gsum = 0
    best = (0, 0) if abs(diff) <= allow else None
    for _ in range(n):
        pick = None
        for u in range(n):
            if locked[u]:
                continue
            ndiff = diff + (-2 * weights[u] if sides[u] == 0
                            else 2 * weights[u])
            if abs(diff) > allow:
                if abs(ndiff) >= abs(diff):
                    continue
            elif abs(ndiff) > slack:
                continue
            if pick is None or gain[u] > gain[pick]:
                pick = u
        if pick is None:
            break
        u = pick
        locked[u] = True
        gsum += gain[u]
        diff += -2 * weights[u] if sides[u] == 0 else 2 * weights[u]
        old = sides[u]
        sides[u] = 1 - old
        for v, w in adj[u].items():
            if not locked[v]:
                gain[v] += 2 * w if sides[v] == old else -2 * w
        moves.append(u)
        if abs(diff) <= allow and (best is None or gsum > best[0]):
            best = (gsum, len(moves))
    keep = 0 if best is None else best[1]
    for u in moves[keep:]:
        sides[u] = 1 - sides[u]
    return best is not None and best[0] > 0


def _refine(adj, weights, sides, allow, max_passes=10):
    for _ in range(max_passes):
        if not _fm_pass(adj, weights, sides, allow):
            break


def _multilevel(adj, weights, allow, rng):
    n = len(adj)
    if n <= 12:
        sides = _initial_sides(adj, weights, allow)
        _refine(adj, weights, sides, allow)
        return sides
    order = [int(u) for u in rng.permutation(n)]
    cadj, cweights, cmap = _coarsen(adj, weights, order)
    if len(cadj) >= n:
        sides = _initial_sides(adj, weights, allow)
    else:
        csides = _multilevel(cadj, cweights, allow, rng)
        sides = [csides[cmap[u]] for u in range(n)]
    _refine(adj, weights, sides, allow)
    return sides


def bipartition(core_graph: CoreGraph, tolerance: float = 0.05,
                seed: int = 0, restarts: int = 8) -> ChipAssignment:
    """Two-chip split of the core graph minimizing inter-chip axons.

    Multilevel scheme: heavy-edge matching down to a small graph, an
    exhaustive split there, FM refinement on the way back up.  Restarted
    with shuffled matching orders; never returns worse than the naive
    contiguous split.
    """
    n = core_graph.n
    if n < 2:
        raise PartitionError("bipartition needs at least 2 cores")
    allow = max(int(tolerance * n), n % 2)
    adj = _adjacency(n, core_graph.edges)
    weights = [1] * n
    rng = np.random.default_rng(seed)

    best = None
    for _ in range(restarts):
        sides = _multilevel(adj, weights, allow, rng)
        key = (_cut(adj, sides), abs(n - 2 * sum(sides)), tuple(sides))
        if best is None or key < best:
            best = key

    naive = naive_assignment(n)
    if _cut(adj, list(naive)) < best[0]:
        best = (_cut(adj, list(naive)), n % 2, naive)

    chips = tuple(best[2])
    relaxed = abs(n - 2 * sum(chips)) > allow
    if relaxed:
        log.warning("bipartition: balance tolerance %.3f infeasible, "
                    "relaxed to |%d - %d|", tolerance,
                    n - sum(chips), sum(chips))
    return ChipAssignment(chips=chips, tolerance=tolerance, relaxed=relaxed)


def partition_network(graph, budget: CoreBudget = None,
                      tolerance: float = 0.05, seed: int = 0,
                      naive: bool = False):
    """Full two-stage partition; returns (Partition, CoreGraph)."""
    budget = budget or CoreBudget()
    cores = layer_cores(graph, budget)
    cg = build_core_graph(graph, cores)
    if naive:
        assign = ChipAssignment(chips=naive_assignment(len(cores)),
                                tolerance=tolerance)
    else:
        assign = bipartition(cg, tolerance=tolerance, seed=seed)
    return Partition(budget=budget, cores=tuple(cores), assignment=assign), cg


def save_partition(partition: Partition, path):
    doc = {
        "format": PARTITION_FORMAT,
        "version": PARTITION_VERSION,
        "budget": asdict(partition.budget),
        "tolerance": partition.assignment.tolerance,
        "relaxed": partition.assignment.relaxed,
        "chips": list(partition.assignment.chips),
        "cores": [{"layer": cr.layer, "origin": list(cr.origin),
                   "extent": list(cr.extent)} for cr in partition.cores],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_partition(path) -> Partition:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != PARTITION_FORMAT:
        raise PartitionError(f"{path}: not a partition file")
    if doc.get("version") != PARTITION_VERSION:
        raise PartitionError(f"{path}: unsupported version {doc.get('version')}")
    cores = tuple(CoreRegion(c["layer"], tuple(c["origin"]), tuple(c["extent"]))
                  for c in doc["cores"])
    assign = ChipAssignment(chips=tuple(doc["chips"]),
                            tolerance=doc["tolerance"],
                            relaxed=doc["relaxed"])
    return Partition(budget=CoreBudget(**doc["budget"]), cores=cores,
                     assignment=assign)


def dump_core_graph(core_graph: CoreGraph, path):
    """Plain-text node/edge list for external inspection."""
    with open(path, "w") as fh:
        fh.write(f"nodes {core_graph.n}\n")
        for i, cr in enumerate(core_graph.cores):
            layer = getattr(cr, "layer", "?")
            vol = getattr(cr, "volume", 0)
            fh.write(f"node {i} {layer} {vol}\n")
        fh.write(f"edges {len(core_graph.edges)}\n")
        for (u, v), w in sorted(core_graph.edges.items()):
            fh.write(f"edge {u} {v} {w}\n")
