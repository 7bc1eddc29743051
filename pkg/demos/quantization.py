"""Closed-form decay integral vs the exact truncated geometric sum.

Mapping trained weights onto 12-bit chip arithmetic needs the total charge
a synaptic pulse delivers before the state decays below one count.  The
exact value is a sum over steps; the closed form replaces the final
truncated step with a continuity constant q.  This compares both and shows
why q = 0.494 beats the naive 0.5.
"""

import math

from spikeforge import quantizer


def accuracy_table():
    print("exact sum vs closed form, q = 0.494")
    print(f"{'u0':>9} {'delta_u':>8} {'exact':>12} {'approx':>12} {'rel err':>10}")
    for delta_u in (100, 742, 4000):
        for u0 in (2 ** 16, 2 ** 19, 2 ** 23):
            exact = quantizer.decay_integral_exact(u0, delta_u)
            approx = quantizer.decay_integral_approx(float(u0), delta_u)
            err = abs(approx - exact) / exact
            print(f"{u0:9d} {delta_u:8d} {exact:12.2f} {approx:12.2f} {err:10.2e}")
    print("large pulses are sub-0.1%; that is the regime quantization runs in")


def n_of(u0, delta_u, q):
    r = (4096 - delta_u) / 4096.0
    return math.log((1.0 - r) * u0 / q) / abs(math.log(r))


def constant_comparison():
    print("worst relative error over the small-pulse grid, per constant")
    grid_u0 = [2 ** k for k in range(4, 24)]
    grid_d = [100, 742, 2000, 4000]
    for q in (0.5, 0.494):
        errs = []
        for d in grid_d:
            for u0 in grid_u0:
                # closed form only applies with a positive truncation step
                if n_of(u0, d, 0.494) <= 0 or n_of(u0, d, 0.5) <= 0:
                    continue
                exact = quantizer.decay_integral_exact(u0, d)
                approx = quantizer.decay_integral_approx(float(u0), d, q)
                errs.append(abs(approx - exact) / exact)
        print(f"q = {q:5.3f}  worst rel err {max(errs):.6f}  ({len(errs)} points)")
    print("0.494 shaves the worst case, which is why it is the default")


if __name__ == "__main__":
    accuracy_table()
    print()
    constant_comparison()
