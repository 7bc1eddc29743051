"""Fit the default EnergyParams to the published hardware anchor.

Takes the stats and partition artifacts of a finished desk run, keeps the
relative proportions between the per-event costs fixed, and least-squares
fits two global scale factors (one for the energy side, one for the time
side) in log space against three anchor numbers from a published
neuromorphic measurement row (hardware reference, not validated):

  0.01 J per inference, 23.79 inferences per second, 0.34 W dynamic.

Prints an EnergyParams block ready to paste into costmodel.py.

usage: python3 tools/calibrate_energy.py stats.json partition.json
"""

import argparse
import math

import numpy as np

from spikeforge import costmodel, fixsim, partitioner

E_REF = 0.01      # J per inference
RATE_REF = 23.79  # inferences per second
POWER_REF = 0.34  # W dynamic

# unit-scale proportions between the terms; only the two global scales fit
BASE = costmodel.EnergyParams(
    e_synop=24e-12, e_neuron_update=81e-12,
    e_spike_hop_intra=4e-12, e_spike_hop_inter=120e-12,
    t_step_base=5e-6, t_synop=2e-9, t_inter_hop=3e-9)


def fit(stats, partition, steps):
    raw = costmodel.estimate(stats, partition, steps, BASE)
    design = np.array([[1.0, 0.0], [0.0, -1.0], [1.0, -1.0]])
    target = np.array([
        math.log(E_REF / raw.energy_per_inference),
        math.log(RATE_REF / raw.inferences_per_second),
        math.log(POWER_REF / (raw.energy_per_inference
                              * raw.inferences_per_second)),
    ])
    (x, y), *_ = np.linalg.lstsq(design, target, rcond=None)
    alpha, beta = math.exp(x), math.exp(y)

    def sig3(v):
        return float(f"{v:.3g}")

    return costmodel.EnergyParams(
        e_synop=sig3(alpha * BASE.e_synop),
        e_neuron_update=sig3(alpha * BASE.e_neuron_update),
        e_spike_hop_intra=sig3(alpha * BASE.e_spike_hop_intra),
        e_spike_hop_inter=sig3(alpha * BASE.e_spike_hop_inter),
        t_step_base=sig3(beta * BASE.t_step_base),
        t_synop=sig3(beta * BASE.t_synop),
        t_inter_hop=sig3(beta * BASE.t_inter_hop))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("stats")
    ap.add_argument("partition")
    args = ap.parse_args()

    stats = fixsim.load_stats(args.stats)
    part = partitioner.load_partition(args.partition)
    fitted = fit(stats, part, stats.steps)

    print("fitted EnergyParams (paste into costmodel.py):")
    for name in ("e_synop", "e_neuron_update", "e_spike_hop_intra",
                 "e_spike_hop_inter", "t_step_base", "t_synop",
                 "t_inter_hop"):
        print(f"    {name}: float = {getattr(fitted, name):.3g}")

    check = costmodel.estimate(stats, part, stats.steps, fitted)
    print(f"\nanchor check (model / reference):")
    print(f"  energy/inf  {check.energy_per_inference:.4g} / {E_REF}")
    print(f"  inf/s       {check.inferences_per_second:.4g} / {RATE_REF}")
    print(f"  dynamic W   {check.dynamic_power:.4g} / {POWER_REF}")


if __name__ == "__main__":
    main()
