"""Rate staircase, training surrogate, and spike-phase noise side by side.

The forward rate counts integrate-and-fire periods on a fixed step grid,
so rate vs drive is a staircase capped at 1/dt.  Training swaps in a smooth
surrogate plus a zero-mean noise term that models where spikes land inside
the readout window.  This prints all three so the shapes are visible.
"""

import numpy as np

from spikeforge import ratemodel


def count_spikes(x, dt, steps):
    # plain float integrator; reset discards the overshoot, same as the chip
    v, n = 0.0, 0
    for _ in range(steps):
        v += x * dt
        if v >= 1.0:
            v = 0.0
            n += 1
    return n


def staircase_table(params):
    print("forward rate vs a counted spike train (1 s window)")
    print(f"{'drive':>8} {'rate eq Hz':>11} {'counted':>8} {'surrogate':>10}")
    for x in (12.0, 47.5, 105.0, 320.0, 760.0, 1500.0):
        rate = ratemodel.forward_rate(x, params)
        counted = count_spikes(x, params.dt, steps=1000)
        smooth = ratemodel.backward_rate(x, params)
        print(f"{x:8.1f} {rate:11.1f} {counted:8d} {smooth:10.1f}")
    print("note: drives above 1/dt pin the rate at the cap")


def noise_bias_table(params):
    print("noisy rate estimator, stratified over the spike phase")
    u = (np.arange(4096) + 0.5) / 4096
    for x in (40.0, 120.0, 400.0):
        noisy = ratemodel.forward_rate_noisy(x, params, u)
        plain = ratemodel.forward_rate(x, params)
        print(f"drive {x:6.1f}  mean sample {noisy.mean():8.3f} Hz  "
              f"deterministic {plain:7.1f} Hz  bias {noisy.mean() - plain:+.2e}")
    print("the phase term averages out, so training sees an unbiased rate")


def regularizer_table():
    reg = ratemodel.RegularizerParams(percentile=99.0, f_min=50.0, f_max=200.0)
    rng = np.random.default_rng(0)
    print("band regularizer on the 99th percentile rate")
    for scale in (30.0, 100.0, 400.0):
        rates = rng.gamma(shape=2.0, scale=scale / 2.0, size=(64, 128))
        loss, _ = ratemodel.fr_reg_loss(rates, reg)
        p99 = float(np.percentile(rates, 99.0, axis=0).mean())
        print(f"mean p99 {p99:7.1f} Hz  penalty {loss:10.2f}")
    print("only neurons pushed outside [50, 200] Hz pay anything")


if __name__ == "__main__":
    params = ratemodel.RateNeuronParams(dt=1e-3, tau=5e-3)
    staircase_table(params)
    print()
    noise_bias_table(params)
    print()
    regularizer_table()
