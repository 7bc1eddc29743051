"""End-to-end run: build, train, quantize, partition, simulate, report.

Drives the CLI on the tiny bundled config (a couple of seconds) and then
walks through the report: task accuracy of the rate model vs the
fixed-point spiking run, per-layer firing rates from both routes, and the
cost model's chip-level numbers.  Pass a different config path to rerun
the same story at another scale.
"""

import json
import os
import sys

from spikeforge import cli

HERE = os.path.dirname(os.path.abspath(__file__))
TINY = os.path.join(HERE, os.pardir, "configs", "tiny.json")


def run(config_path, outdir):
    rc = cli.main(["--config", config_path, "--outdir", outdir, "run"])
    if rc != 0:
        raise SystemExit(f"pipeline failed with exit code {rc}")
    with open(os.path.join(outdir, "report.json")) as fh:
        return json.load(fh)


def show(report):
    acc = report["accuracy"]
    print("pixel accuracy")
    print(f"  rate model (float): {acc['rate_model']:.4f}")
    print(f"  spiking (fixed point): {acc['spiking']:.4f}")
    print(f"  gap: {100.0 * acc['gap']:.2f} points")
    print()

    print("layer firing rates, rate model vs fixed-point simulator")
    print(f"{'layer':<10} {'rate model':>11} {'fixsim':>9} {'rel err':>8}")
    rates = report["layer_rates_hz"]
    for name in sorted(rates):
        row = rates[name]
        print(f"{name:<10} {row['rate_model_hz']:11.2f} "
              f"{row['fixsim_hz']:9.2f} {100.0 * row['rel_err']:7.2f}%")
    print()

    cost = report["cost"]
    print("cost model, optimized vs naive partition")
    for label in ("optimized", "naive"):
        rep = cost[label]
        print(f"  {label:<10} energy {rep['energy_per_inference']:.4f} J"
              f"  rate {rep['inferences_per_second']:.2f} inf/s"
              f"  power {rep['dynamic_power']:.3f} W"
              f"  inter-chip hops {rep['inter_hops']}")
    ratio = cost["optimized_vs_naive"]
    print(f"  optimized partition: {ratio['energy_ratio']:.2f}x less energy, "
          f"{ratio['rate_ratio']:.2f}x more inferences per second")


if __name__ == "__main__":
    config = sys.argv[1] if len(sys.argv) > 1 else TINY
    outdir = sys.argv[2] if len(sys.argv) > 2 else os.path.join(
        HERE, os.pardir, "run", "demo_pipeline")
    show(run(config, outdir))
