"""Rate model for hard-reset integrate-and-fire neurons on a fixed timestep.

The forward nonlinearity rounds the inter-spike interval up to a whole
number of timesteps, which is what a discrete-time IF neuron actually
produces.  The backward curve is a smooth surrogate whose derivative is
used for every gradient.  A zero-mean noise term models the phase jitter
seen through a lowpass synaptic filter, so that noisy training matches
the average behaviour of the deployed spiking network.
"""

from dataclasses import dataclass

import numpy as np

# Below this p/tau ratio the closed form for the noise term cancels badly
# in float64, so a second-order series in p/tau takes over.
_ETA_SERIES_CUTOFF = 1e-4


@dataclass(frozen=True)
class RateNeuronParams:
    """Neuron constants: timestep, synaptic lowpass, output amplitude."""

    dt: float = 0.001
    tau: float = 0.005
    amplitude: float = 1.0 / 200.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.amplitude <= 0:
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")


@dataclass(frozen=True)
class RegularizerParams:
    """Percentile band penalty on per-neuron firing rates (Hz)."""

    percentile: float = 99.0
    f_min: float = 50.0
    f_max: float = 200.0
    weight: float = 1e-4

    def __post_init__(self):
        if not 0.0 <= self.percentile <= 100.0:
            raise ValueError(f"percentile must be in [0, 100], got {self.percentile}")
        if self.f_min < 0 or self.f_max <= self.f_min:
            raise ValueError(f"need 0 <= f_min < f_max, got [{self.f_min}, {self.f_max}]")
        if self.weight < 0:
            raise ValueError(f"weight must be non-negative, got {self.weight}")


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


def _scalar_ok(x, out):
    # mirror scalar inputs with scalar outputs
    return float(out) if np.ndim(x) == 0 else out


def spike_period(x, params: RateNeuronParams):
    """Inter-spike interval in seconds: dt * ceil(1 / (x * dt)).

    Non-positive drives never spike and get an infinite period.
    """
    x = _as_array(x)
    dt = params.dt
    pos = x > 0
    with np.errstate(divide="ignore", over="ignore"):
        steps = np.ceil(1.0 / (np.where(pos, x, 1.0) * dt))
    p = np.where(pos, steps * dt, np.inf)
    return _scalar_ok(x, p)


def forward_rate(x, params: RateNeuronParams):
    """Deterministic firing rate in Hz; zero for x <= 0, capped at 1/dt."""
    x = _as_array(x)
    p = _as_array(spike_period(x, params))
    with np.errstate(divide="ignore"):
        r = np.where(np.isfinite(p), 1.0 / p, 0.0)
    return _scalar_ok(x, r)


def _eta(u, z):
    """Zero-mean rate perturbation for spike phase u in [0, 1] and z = p/tau."""
    u = _as_array(u)
    z = _as_array(z)
    u, z = np.broadcast_arrays(u, z)
    small = z < _ETA_SERIES_CUTOFF
    zs = np.where(small, 1.0, z)   # keep the closed form finite where unused
    zb = np.where(small, z, 0.0)   # and the series finite where z is inf
    with np.errstate(over="ignore", invalid="ignore"):
        direct = 0.5 + 1.0 / zs - np.exp(-u * zs) / (-np.expm1(-zs)) - u
    series = zb * (u / 2.0 - u * u / 2.0 - 1.0 / 12.0) + (zb * zb) * (
        u / 12.0 - u * u / 4.0 + u ** 3 / 6.0
    )
    return np.where(small, series, direct)


def forward_rate_noisy(x, params: RateNeuronParams, u):
    """Rate sample (1 + eta) / p for a uniform phase draw u in [0, 1].

    eta averages to zero over u, so the mean of this estimator is the
    deterministic forward_rate.  Shapes of x and u broadcast.
    """
    x = _as_array(x)
    u = _as_array(u)
    if np.any((u < 0.0) | (u > 1.0)):
        raise ValueError("phase samples u must lie in [0, 1]")
    p = _as_array(spike_period(x, params))
    z = p / params.tau
    eta = _eta(u, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(np.isfinite(p), (1.0 + eta) / np.where(np.isfinite(p), p, 1.0), 0.0)
    out = np.where(x > 0, r, 0.0)
    if x.ndim == 0 and u.ndim == 0:
        return float(out)
    return out


def backward_rate(x, params: RateNeuronParams):
    """Smooth surrogate rate x / (1 + x*dt/2); zero for x <= 0."""
    x = _as_array(x)
    pos = x > 0
    r = np.where(pos, x / (1.0 + x * params.dt / 2.0), 0.0)
    return _scalar_ok(x, r)


def backward_rate_grad(x, params: RateNeuronParams):
    """Derivative of backward_rate: (1 + x*dt/2)^-2 for x > 0, else 0."""
    x = _as_array(x)
    pos = x > 0
    g = np.where(pos, (1.0 + x * params.dt / 2.0) ** -2.0, 0.0)
    return _scalar_ok(x, g)


def _interp_percentile(sorted_rates, percentile):
    # linear interpolation between order statistics, matching numpy's default
    n = sorted_rates.shape[0]
    pos = (percentile / 100.0) * (n - 1)
    k = int(np.floor(pos))
    k1 = min(k + 1, n - 1)
    frac = pos - k
    return k, k1, frac


def fr_reg_loss(rates, reg: RegularizerParams):
    """Band penalty on the per-neuron batch percentile of firing rates.

    rates has shape (batch, neurons), entries in Hz.  Returns the scalar
    loss mean_i((max(0, f_min - R_i) + max(0, R_i - f_max))^2) and its
    gradient with respect to every rate entry.  The percentile is linearly
    interpolated between order statistics; its gradient goes to the one or
    two samples that define it, split equally across ties.
    """
    rates = _as_array(rates)
    if rates.ndim != 2:
        raise ValueError(f"rates must be 2-D (batch, neurons), got shape {rates.shape}")
    if np.any(rates < 0):
        raise ValueError("rates must be non-negative")
    b, n = rates.shape
    order = np.sort(rates, axis=0)
    k, k1, frac = _interp_percentile(order, reg.percentile)
    lo_val = order[k, :]
    hi_val = order[k1, :]
    r_p = (1.0 - frac) * lo_val + frac * hi_val

    under = np.maximum(0.0, reg.f_min - r_p)
    over = np.maximum(0.0, r_p - reg.f_max)
    loss = float(np.mean((under + over) ** 2))

    # d loss / d R_i, then scatter onto the defining sample(s)
    dloss_drp = (2.0 / n) * (over - under)
    lo_mask = rates == lo_val[None, :]
    hi_mask = rates == hi_val[None, :]
    lo_cnt = lo_mask.sum(axis=0)
    hi_cnt = hi_mask.sum(axis=0)
    grad = (
        dloss_drp[None, :]
        * ((1.0 - frac) * lo_mask / lo_cnt[None, :] + frac * hi_mask / hi_cnt[None, :])
    )
    return loss, grad
