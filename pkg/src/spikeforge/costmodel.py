"""Parametric energy and throughput estimates from spike statistics.

Everything here is a model, not a measurement. The default constants are a
least-squares fit of two global scale factors (energy side, time side) to one
published hardware row, so absolute joules are only meaningful relative to
that anchor; ratios between two reports on the same network are the outputs
to trust. Idle power is excluded throughout: all terms are event-driven or
per-step dynamic costs.

Accounting:

  energy    = e_synop * synops + e_neuron_update * neurons * T
            + e_hop_intra * intra + e_hop_inter * inter
  step time = t_step_base + t_synop * max_core_synops / T
            + t_inter_hop * inter / T
  rate      = 1 / (T * step time)

The step-time expression models the per-step barrier: the busiest core sets
the compute phase and every cross-chip packet stretches the exchange phase.
"""

import csv
import json
from dataclasses import dataclass, asdict

import numpy as np

REPORT_FORMAT = "spikeforge-cost"
REPORT_VERSION = 1

_ENERGY_FIELDS = ("e_synop", "e_neuron_update",
                  "e_spike_hop_intra", "e_spike_hop_inter")
_TIME_FIELDS = ("t_step_base", "t_synop", "t_inter_hop")


@dataclass(frozen=True)
class EnergyParams:
    """Joules per event and seconds per unit of per-step work.

    Defaults were fit once by tools/calibrate_energy.py against a published
    neuromorphic datapoint (hardware reference, not validated); the relative
    proportions between the energy terms follow the usual event-cost ordering
    (neuron update > synop, inter-chip hop >> intra-chip hop).
    """

    e_synop: float = 3.64e-10
    e_neuron_update: float = 1.23e-9
    e_spike_hop_intra: float = 6.07e-11
    e_spike_hop_inter: float = 1.82e-9
    t_step_base: float = 6.02e-5
    t_synop: float = 2.41e-8
    t_inter_hop: float = 3.61e-8

    def __post_init__(self):
        for name in _ENERGY_FIELDS + _TIME_FIELDS:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class CostReport:
    energy_per_inference: float
    inferences_per_second: float
    dynamic_power: float
    steps: int
    synops: int
    neuron_updates: int
    intra_hops: int
    inter_hops: int
    per_chip: tuple  # one dict per chip: cores, neurons, synops, energy


def estimate(stats, partition, steps: int, params: EnergyParams = None) -> CostReport:
    """Score one completed fixed-point run under the cost model.

    stats is the SpikeStats from run_inference, partition supplies the
    chip assignment for the breakdown. steps (T) normalizes the per-step
    loads; it is usually stats.steps but callers may amortize differently.
    """
    if params is None:
        params = EnergyParams()
    if steps < 1:
        raise ValueError("steps must be >= 1")

    synops = int(stats.core_synops.sum())
    neuron_updates = stats.neurons * steps
    energy = (params.e_synop * synops
              + params.e_neuron_update * neuron_updates
              + params.e_spike_hop_intra * stats.intra_hops
              + params.e_spike_hop_inter * stats.inter_hops)

    max_core = int(stats.core_synops.max()) if stats.core_synops.size else 0
    step_time = (params.t_step_base
                 + params.t_synop * max_core / steps
                 + params.t_inter_hop * stats.inter_hops / steps)
    rate = 1.0 / (steps * step_time)

    chips = np.asarray(partition.assignment.chips)
    per_chip = []
    for chip in sorted(set(chips.tolist())):
        on = np.flatnonzero(chips == chip)
        neurons = sum(partition.cores[i].volume for i in on)
        chip_syn = int(stats.core_synops[on].sum())
        # hop terms live on the boundary, not inside one chip's budget
        per_chip.append({
            "chip": int(chip),
            "cores": int(on.size),
            "neurons": int(neurons),
            "synops": chip_syn,
            "energy": params.e_synop * chip_syn
                      + params.e_neuron_update * neurons * steps,
        })

    return CostReport(energy_per_inference=energy,
                      inferences_per_second=rate,
                      dynamic_power=energy * rate,
                      steps=steps,
                      synops=synops,
                      neuron_updates=neuron_updates,
                      intra_hops=stats.intra_hops,
                      inter_hops=stats.inter_hops,
                      per_chip=tuple(per_chip))


def compare(report_a, report_b) -> dict:
    """How report_b fares against report_a (b = candidate, a = baseline).

    energy_ratio > 1 means b spends less energy per inference; rate_ratio > 1
    means b sustains more inferences per second. Matching reports give 1.0.
    """
    energy_ratio = report_a.energy_per_inference / report_b.energy_per_inference
    rate_ratio = report_b.inferences_per_second / report_a.inferences_per_second
    return {
        "energy_ratio": energy_ratio,
        "rate_ratio": rate_ratio,
        "inter_hops_a": report_a.inter_hops,
        "inter_hops_b": report_b.inter_hops,
        "summary": [
            f"{energy_ratio:.2f}x less energy per inference",
            f"{rate_ratio:.2f}x more inferences per second",
        ],
    }


def save_report(report: CostReport, path):
    doc = {"format": REPORT_FORMAT, "version": REPORT_VERSION}
    doc.update(asdict(report))
    doc["per_chip"] = list(doc["per_chip"])
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_report(path) -> CostReport:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != REPORT_FORMAT:
        raise ValueError(f"{path} is not a cost report")
    if doc.get("version") != REPORT_VERSION:
        raise ValueError(f"unsupported cost report version {doc.get('version')}")
    return CostReport(
        energy_per_inference=doc["energy_per_inference"],
        inferences_per_second=doc["inferences_per_second"],
        dynamic_power=doc["dynamic_power"],
        steps=doc["steps"],
        synops=doc["synops"],
        neuron_updates=doc["neuron_updates"],
        intra_hops=doc["intra_hops"],
        inter_hops=doc["inter_hops"],
        per_chip=tuple(doc["per_chip"]))


_CSV_COLUMNS = ("label", "energy_per_inference", "inferences_per_second",
                "dynamic_power", "steps", "synops", "neuron_updates",
                "intra_hops", "inter_hops")


def save_csv(labeled_reports, path):
    """Write (label, report) pairs as one spreadsheet row each."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for label, rep in labeled_reports:
            writer.writerow([label] + [getattr(rep, c) for c in _CSV_COLUMNS[1:]])
