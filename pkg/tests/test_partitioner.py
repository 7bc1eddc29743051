import itertools
import json

import numpy as np
import pytest

from spikeforge import netgraph as ng, partitioner as pt

from oracles import (brute_axon_count, brute_synapse_entries,
                     exhaustive_bipartition, random_graph)


def _conn(kernel=3, stride=1, deconv=False, crop=(0, 0), cin=1):
    return ng.Connection("a", "b", kernel, stride, deconv,
                         crop[0], crop[1], 0, cin)


def _region(origin, extent, layer="a"):
    return pt.CoreRegion(layer, tuple(origin), tuple(extent))


def test_budget_validation():
    with pytest.raises(ValueError, match="max_neurons"):
        pt.CoreBudget(max_neurons=0)
    with pytest.raises(ValueError, match="max_in_axons"):
        pt.CoreBudget(max_in_axons=-1)


def test_split_single_region():
    regions = pt.split_layer((8, 8, 1), pt.CoreBudget(max_neurons=64))
    assert regions == [pt.CoreRegion("layer", (0, 0, 0), (8, 8, 1))]


def test_split_large_layer_hits_arithmetic_minimum():
    regions = pt.split_layer((64, 64, 12), pt.CoreBudget())
    assert len(regions) == 48
    assert max(r.volume for r in regions) <= 1024
    cells = set()
    for r in regions:
        for dy, dx, dc in itertools.product(*(range(e) for e in r.extent)):
            cells.add((r.origin[0] + dy, r.origin[1] + dx, r.origin[2] + dc))
    assert len(cells) == 64 * 64 * 12


def test_split_axon_bound_forces_single_columns():
    # a 3x3 window over 4 source channels costs 36 in-axons, so a budget of
    # exactly 36 admits only 1x1 spatial tiles
    aff = [(_conn(3, 1, cin=4), (10, 10, 4))]
    budget = pt.CoreBudget(max_in_axons=36)
    regions = pt.split_layer((8, 8, 6), budget, aff, n_efferent=1)
    assert all(r.extent == (1, 1, 6) for r in regions)
    assert len(regions) == 64
    full = _region((0, 0, 0), (10, 10, 4))
    for r in regions:
        assert pt.axon_count(full, r, aff[0][0]) <= 36


def test_split_infeasible_budget():
    aff = [(_conn(3, 1, cin=1), (10, 10, 1))]
    with pytest.raises(pt.PartitionError, match="no region size"):
        pt.split_layer((8, 8, 2), pt.CoreBudget(max_in_axons=8), aff)


def _tile_ok(origin, extent, budget, affs, n_eff):
    vol = extent[0] * extent[1] * extent[2]
    if vol > budget.max_neurons or vol * n_eff > budget.max_out_axons:
        return False
    in_ax = syn = 0
    for kernel, stride, deconv, crop, src_shape in affs:
        full_o, full_e = (0, 0, 0), src_shape
        in_ax += brute_axon_count(full_o, full_e, origin, extent,
                                  kernel, stride, crop, deconv)
        syn += brute_synapse_entries(full_o, full_e, origin, extent,
                                     kernel, stride, crop, deconv)
    return in_ax <= budget.max_in_axons and syn <= budget.max_synapse_memory


def _oracle_min_cores(shape, budget, affs, n_eff):
    m, n, c = shape
    best = None
    for q, r, s in itertools.product(range(1, m + 1), range(1, n + 1),
                                     range(1, c + 1)):
        tiles = [((y, x, ch), (min(q, m - y), min(r, n - x), min(s, c - ch)))
                 for y in range(0, m, q) for x in range(0, n, r)
                 for ch in range(0, c, s)]
        if all(_tile_ok(o, e, budget, affs, n_eff) for o, e in tiles):
            if best is None or len(tiles) < best:
                best = len(tiles)
    return best


@pytest.mark.parametrize("budget", [
    pt.CoreBudget(max_neurons=12, max_in_axons=40, max_synapse_memory=500),
    pt.CoreBudget(max_neurons=9, max_in_axons=60, max_out_axons=18,
                  max_synapse_memory=400),
])
def test_split_matches_exhaustive_oracle(budget):
    affs_mod = [(_conn(3, 1, cin=2), (8, 8, 2))]
    affs_orc = [(3, 1, False, (0, 0), (8, 8, 2))]
    regions = pt.split_layer((6, 6, 2), budget, affs_mod, n_efferent=2)
    want = _oracle_min_cores((6, 6, 2), budget, affs_orc, 2)
    assert len(regions) == want
    for r in regions:
        assert _tile_ok(r.origin, r.extent, budget, affs_orc, 2)


def test_split_deconv_afferent_matches_oracle():
    affs_mod = [(_conn(2, 2, deconv=True, cin=3), (4, 4, 3))]
    affs_orc = [(2, 2, True, (0, 0), (4, 4, 3))]
    budget = pt.CoreBudget(max_neurons=16, max_in_axons=20)
    regions = pt.split_layer((8, 8, 2), budget, affs_mod, n_efferent=1)
    assert len(regions) == _oracle_min_cores((8, 8, 2), budget, affs_orc, 1)
    for r in regions:
        assert _tile_ok(r.origin, r.extent, budget, affs_orc, 1)


def test_axon_count_disjoint_fields():
    conn = _conn(3, 1, cin=2)
    a = _region((0, 0, 0), (3, 3, 2))
    b = _region((6, 6, 0), (3, 3, 4), layer="b")
    assert pt.axon_count(a, b, conn) == 0


def test_axon_count_aligned_one_by_one():
    conn = _conn(1, 1, cin=3)
    a = _region((2, 3, 0), (4, 5, 3))
    b = _region((2, 3, 0), (4, 5, 7), layer="b")
    assert pt.axon_count(a, b, conn) == 4 * 5 * 3


@pytest.mark.parametrize("kernel,stride,deconv,crop", [
    (3, 1, False, (0, 0)),
    (3, 2, False, (0, 0)),
    (1, 1, False, (0, 0)),
    (3, 1, False, (5, 5)),
    (2, 2, True, (0, 0)),
])
def test_axon_and_synapse_counts_match_brute_force(kernel, stride, deconv, crop):
    rng = np.random.default_rng(11)
    conn = _conn(kernel, stride, deconv, crop, cin=2)
    for _ in range(40):
        ao = tuple(int(v) for v in rng.integers(0, 12, 2)) + (0,)
        ae = tuple(int(v) for v in rng.integers(1, 6, 2)) + (2,)
        bo = tuple(int(v) for v in rng.integers(0, 10, 2)) + (0,)
        be = tuple(int(v) for v in rng.integers(1, 5, 2)) + (3,)
        a, b = _region(ao, ae), _region(bo, be, layer="b")
        assert pt.axon_count(a, b, conn) == \
            brute_axon_count(ao, ae, bo, be, kernel, stride, crop, deconv)
        assert pt.synapse_entries(a, b, conn) == \
            brute_synapse_entries(ao, ae, bo, be, kernel, stride, crop, deconv)


def test_core_graph_structure():
    g = ng.build_unet(16, 2, 1, seed=0)
    cores = pt.layer_cores(g, pt.CoreBudget(max_neurons=128))
    cg = pt.build_core_graph(g, cores)
    assert cg.n == len(cores)
    layer_pairs = {(cores[u].layer, cores[v].layer) for u, v in cg.edges}
    assert layer_pairs <= {("enc", "c1a"), ("c1a", "c1b"), ("c1b", "out")}
    assert all(u < v for u, v in cg.edges)
    assert all(w >= 1 for w in cg.edges.values())

    # summed per-destination edge weights equal the independent in-axon
    # load; cores are emitted in layer order, so the source index of every
    # edge is the lower one
    loads = pt.core_loads(g, cores)
    for b in range(cg.n):
        into = sum(w for (u, v), w in cg.edges.items() if v == b)
        assert into == loads[b]["in_axons"]


def test_core_loads_respect_budget():
    g = ng.build_unet(16, 2, 1, seed=0)
    budget = pt.CoreBudget(max_neurons=128, max_in_axons=600,
                           max_synapse_memory=6000)
    cores = pt.layer_cores(g, budget)
    for load in pt.core_loads(g, cores):
        assert load["neurons"] <= budget.max_neurons
        assert load["in_axons"] <= budget.max_in_axons
        assert load["out_axons"] <= budget.max_out_axons
        assert load["synapses"] <= budget.max_synapse_memory


def test_edge_cut_basics():
    cg = pt.CoreGraph(cores=list(range(3)), edges={(0, 1): 4, (1, 2): 7})
    assert pt.edge_cut(cg, (0, 0, 0)) == 0
    assert pt.edge_cut(cg, (0, 1, 1)) == 4
    assert pt.edge_cut(cg, (0, 0, 1)) == 7
    with pytest.raises(pt.PartitionError, match="length"):
        pt.edge_cut(cg, (0, 1))


def test_naive_assignment():
    assert pt.naive_assignment(4) == (0, 0, 1, 1)
    assert pt.naive_assignment(5) == (0, 0, 0, 1, 1)


def test_bipartition_small_graphs():
    cyc = pt.CoreGraph(cores=list(range(4)),
                       edges={(0, 1): 1, (1, 2): 1, (2, 3): 1, (0, 3): 1})
    assert pt.edge_cut(cyc, pt.bipartition(cyc)) == 2
    k4 = pt.CoreGraph(cores=list(range(4)),
                      edges={p: 1 for p in itertools.combinations(range(4), 2)})
    assert pt.edge_cut(k4, pt.bipartition(k4)) == 4
    p4 = pt.CoreGraph(cores=list(range(4)),
                      edges={(0, 1): 1, (1, 2): 1, (2, 3): 1})
    assert pt.edge_cut(p4, pt.bipartition(p4)) == 1
    lone = pt.CoreGraph(cores=list(range(2)), edges={(0, 1): 9})
    assert pt.edge_cut(lone, pt.bipartition(lone)) == 9
    with pytest.raises(pt.PartitionError, match="at least 2"):
        pt.bipartition(pt.CoreGraph(cores=[0], edges={}))


def test_bipartition_matches_exhaustive_on_random_graphs():
    # frozen pilot result: 100/100 optimal on these seeds, never above naive
    matches = 0
    for seed in range(100):
        n = 8 + seed % 5
        edges = random_graph(seed, n)
        cg = pt.CoreGraph(cores=list(range(n)), edges=edges)
        cut = pt.edge_cut(cg, pt.bipartition(cg, seed=seed))
        opt, _ = exhaustive_bipartition(n, edges)
        assert cut >= opt
        assert cut <= pt.edge_cut(cg, pt.naive_assignment(n))
        matches += cut == opt
    assert matches >= 90
    assert matches == 100


def test_bipartition_optimal_through_coarsening():
    # 16..18 nodes force the matching/uncoarsening path
    for seed in range(6):
        n = 16 + seed % 3
        edges = random_graph(1000 + seed, n)
        cg = pt.CoreGraph(cores=list(range(n)), edges=edges)
        cut = pt.edge_cut(cg, pt.bipartition(cg, seed=seed))
        opt, _ = exhaustive_bipartition(n, edges)
        assert cut == opt


def test_bipartition_balance():
    edges = random_graph(3, 9)
    cg = pt.CoreGraph(cores=list(range(9)), edges=edges)
    asn = pt.bipartition(cg)
    assert abs(9 - 2 * sum(asn.chips)) <= 1
    assert not asn.relaxed

    edges = random_graph(4, 12)
    cg = pt.CoreGraph(cores=list(range(12)), edges=edges)
    asn = pt.bipartition(cg, tolerance=0.05)
    assert sum(asn.chips) == 6


def test_bipartition_deterministic():
    edges = random_graph(7, 14)
    cg = pt.CoreGraph(cores=list(range(14)), edges=edges)
    a = pt.bipartition(cg, seed=3)
    b = pt.bipartition(cg, seed=3)
    assert a == b


def test_partition_round_trip(tmp_path):
    g = ng.build_unet(16, 2, 1, seed=0)
    part, cg = pt.partition_network(g, pt.CoreBudget(max_neurons=128))
    assert len(part.assignment.chips) == cg.n
    assert set(part.by_layer()) == {"enc", "c1a", "c1b", "out"}

    path = tmp_path / "part.json"
    pt.save_partition(part, path)
    back = pt.load_partition(path)
    assert back == part

    first = path.read_bytes()
    pt.save_partition(part, path)
    assert path.read_bytes() == first

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"format": "other"}))
    with pytest.raises(pt.PartitionError, match="not a partition"):
        pt.load_partition(bad)


def test_partition_naive_mode():
    g = ng.build_unet(16, 2, 1, seed=0)
    part, cg = pt.partition_network(g, pt.CoreBudget(max_neurons=128),
                                    naive=True)
    assert part.assignment.chips == pt.naive_assignment(cg.n)


def test_dump_core_graph(tmp_path):
    g = ng.build_unet(16, 2, 1, seed=0)
    cores = pt.layer_cores(g, pt.CoreBudget(max_neurons=128))
    cg = pt.build_core_graph(g, cores)
    path = tmp_path / "cores.graph"
    pt.dump_core_graph(cg, path)
    lines = path.read_text().splitlines()
    assert lines[0] == f"nodes {cg.n}"
    assert f"edges {len(cg.edges)}" in lines
    assert sum(l.startswith("edge ") for l in lines) == len(cg.edges)
