"""Two-stage mapping of a network onto cores and a pair of chips.

Stage one tiles every layer into core-sized regions under the fan-in,
neuron and synapse-memory budgets.  Stage two bipartitions the resulting
core graph so slow inter-chip spike traffic is minimized.  This prints the
core table for the desk network and compares the multilevel split against
the naive contiguous one.
"""

from spikeforge import netgraph, partitioner


def core_table(graph, cores):
    per_layer = {}
    for region in cores:
        per_layer.setdefault(region.layer, []).append(region)
    print(f"{'layer':<10} {'shape':>12} {'cores':>6} {'tile':>10}")
    for name in netgraph.topo_order(graph):
        if name not in per_layer:
            continue
        shape = graph.layer(name).out_shape
        regions = per_layer[name]
        tile = "x".join(str(e) for e in regions[0].extent)
        print(f"{name:<10} {str(shape.as_tuple()):>12} {len(regions):6d} "
              f"{tile:>10}")
    print(f"total cores: {len(cores)}")


def cut_comparison(graph):
    part, cg = partitioner.partition_network(graph, seed=0)
    naive, _ = partitioner.partition_network(graph, naive=True)
    cut = partitioner.edge_cut(cg, part.assignment.chips)
    cut_naive = partitioner.edge_cut(cg, naive.assignment.chips)
    n = len(part.cores)
    on_b = sum(part.assignment.chips)
    print(f"core graph: {n} cores, {len(cg.edges)} weighted edges")
    print(f"multilevel cut: {cut} axons  (chips {n - on_b}/{on_b})")
    print(f"naive half-split cut: {cut_naive} axons")
    print(f"traffic saved: {100.0 * (1.0 - cut / cut_naive):.1f}%")
    return part


if __name__ == "__main__":
    graph = netgraph.build_unet(32, base_channels=6, meta_layers=2,
                                encoder_channels=8, seed=7)
    budget = partitioner.CoreBudget()
    cores = partitioner.layer_cores(graph, budget)
    core_table(graph, cores)
    print()
    cut_comparison(graph)
