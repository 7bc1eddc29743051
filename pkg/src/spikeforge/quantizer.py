"""Fixed-point parameter mapping for the chip's mantissa/exponent regime.

Weights become 8-bit mantissas under a per-layer scale c and shared
exponent a; thresholds and biases are scaled by 2^a c / y_hat, where
y_hat estimates the total voltage a single deposit contributes through
the decaying-current filter.  The float network computes with rates and
a unit threshold, so before scaling, each layer's weights are converted
to their chip-referred equivalents:

    encoder   w_q = dt * W / y_hat     (constant-current input, one
                                        y_hat cancels the threshold's)
    others    w_q = A * W / y_hat**2   (spiking input: per-spike deposit
                                        is integrated by the filter)
    bias      b_q = dt * b             (applied every step)

With these, an integer neuron whose sources fire at the float-predicted
rates gains voltage at v_th_bar times the float drive per step, so both
networks cross threshold at the same rate.
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import blob, netgraph

# the filter integral is evaluated at its large-deposit asymptote
DECAY_REF_U0 = 2 ** 23

DEFAULT_Q = 0.494

QUANT_FORMAT = "spikeforge-quant"
QUANT_VERSION = 1


class QuantizationError(ValueError):
    pass


@dataclass(frozen=True)
class ChipLimits:
    mantissa_max: int = 255
    u_max: int = 2 ** 23 - 1
    v_max: int = 2 ** 23 - 1
    b_max: int = 2 ** 12 - 1
    decay_bits: int = 12

    def __post_init__(self):
        for name in ("mantissa_max", "u_max", "v_max", "b_max", "decay_bits"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class LayerQuant:
    name: str
    mantissas: np.ndarray   # int32, same shape as the float weights
    exponent: int
    scale: float            # c
    v_th_bar: int
    bias_bar: np.ndarray    # int32 per output channel
    trace: list = field(default_factory=list)  # (a, v_th_bar, max|b|) tried


@dataclass
class QuantizationResult:
    layers: dict            # name -> LayerQuant
    delta_u: int
    delta_v: int
    y_hat: float
    q: float
    v_th: float
    limits: ChipLimits


def decay_constant(tau_s: float, dt: float) -> int:
    """Discrete decay: floor((2^12 - 1)(1 - e^(-dt/tau_s)))."""
    if tau_s <= 0:
        raise ValueError(f"tau_s must be positive, got {tau_s}")
    return int(4095.0 * -math.expm1(-dt / tau_s))


def decay_integral_exact(u0: int, delta_u: int) -> float:
    """Run the integer decay recurrence to zero; returns sum(u)/u0."""
    if u0 < 1:
        raise ValueError(f"u0 must be >= 1, got {u0}")
    u = int(u0)
    total = 0
    mult = 4096 - delta_u
    while u > 0:
        total += u
        u = (u * mult) >> 12
    return total / u0


def decay_integral_approx(u0: float, delta_u: int, q: float = DEFAULT_Q) -> float:
    """Closed-form estimate of the decay sum with rounding-loss constant q.

    The recurrence hits zero after roughly n steps, where the per-step
    floor loss q shrinks the ideal geometric tail; deposits too small to
    sustain even one decayed step return 1.
    """
    r = (4096 - delta_u) / 4096.0
    if not 0.0 < r < 1.0:
        raise ValueError(f"delta_u {delta_u} leaves no decay ratio in (0, 1)")
    n = math.log((1.0 - r) * u0 / q) / abs(math.log(r))
    if n <= 0.0:
        return 1.0
    geo = (1.0 - r ** (n + 1.0)) / (1.0 - r)
    return geo - q * (n + 1.0 - geo) / ((1.0 - r) * u0)


def weight_scale(weights, mantissa_max: int = 255) -> float:
    """Map the float range onto [-mantissa_max, mantissa_max]."""
    peak = float(np.abs(weights).max()) if np.size(weights) else 0.0
    if peak == 0.0:
        raise QuantizationError("cannot scale an all-zero weight tensor")
    return mantissa_max / peak


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


def chip_referred(graph: netgraph.NetworkGraph, y_hat: float):
    """Chip-referred float weights and biases per weighted layer."""
    out = {}
    for l in graph.layers:
        if l.weights is None:
            continue
        if l.kind == netgraph.KIND_ENCODER:
            w_q = graph.dt * l.weights / y_hat
        else:
            w_q = graph.amplitude * l.weights / (y_hat * y_hat)
        out[l.name] = (w_q, graph.dt * l.bias)
    return out


def _search_exponent(name, w_q, b_q, c, y_hat, v_th, limits, a_start=6, a_min=-8):
    """Descend from a_start until threshold and biases are representable."""
    trace = []
    for a in range(a_start, a_min - 1, -1):
        factor = (2.0 ** a) * c / y_hat
        v_bar = int(round_half_away(v_th * factor))
        b_bar = round_half_away(b_q * factor)
        peak_b = int(np.abs(b_bar).max()) if b_bar.size else 0
        trace.append((a, v_bar, peak_b))
        if 1 <= v_bar < limits.v_max and peak_b < limits.b_max:
            return a, v_bar, b_bar.astype(np.int32), trace
    raise QuantizationError(
        f"layer '{name}': no exponent in [{a_min}, {a_start}] fits "
        f"v_th_bar < {limits.v_max} and |bias| < {limits.b_max}; "
        f"tried {[(a, v, b) for a, v, b in trace]}"
    )


def quantize(graph: netgraph.NetworkGraph, limits: ChipLimits = ChipLimits(),
             v_th: float = 1.0, q: float = DEFAULT_Q) -> QuantizationResult:
    """Quantize every weighted layer; per-layer scale c and exponent a.

    Raises QuantizationError when a layer has no nonzero weights or no
    representable exponent; the returned result has passed check_result.
    """
    delta_u = decay_constant(graph.tau_s, graph.dt)
    y_hat = decay_integral_approx(DECAY_REF_U0, delta_u, q)
    layers = {}
    for name, (w_q, b_q) in chip_referred(graph, y_hat).items():
        try:
            c = weight_scale(w_q, limits.mantissa_max)
        except QuantizationError as e:
            raise QuantizationError(f"layer '{name}': {e}") from None
        mant = round_half_away(w_q * c).astype(np.int32)
        a, v_bar, b_bar, trace = _search_exponent(
            name, w_q, b_q, c, y_hat, v_th, limits
        )
        layers[name] = LayerQuant(name=name, mantissas=mant, exponent=a,
                                  scale=c, v_th_bar=v_bar, bias_bar=b_bar,
                                  trace=trace)
    result = QuantizationResult(layers=layers, delta_u=delta_u, delta_v=0,
                                y_hat=y_hat, q=q, v_th=v_th, limits=limits)
    problems = check_result(result)
    if problems:
        raise QuantizationError("quantization violated limits: " + "; ".join(problems))
    return result


def check_result(result: QuantizationResult):
    """Independent re-check of every representability invariant."""
    problems = []
    lim = result.limits
    if not 0 <= result.delta_u <= 4095:
        problems.append(f"delta_u {result.delta_u} outside [0, 4095]")
    if result.delta_v != 0:
        problems.append(f"delta_v must be 0, got {result.delta_v}")
    for name, lq in result.layers.items():
        peak = int(np.abs(lq.mantissas).max())
        if peak > lim.mantissa_max:
            problems.append(f"layer '{name}': |mantissa| {peak} > {lim.mantissa_max}")
        if not 1 <= lq.v_th_bar <= lim.v_max:
            problems.append(f"layer '{name}': v_th_bar {lq.v_th_bar} outside [1, {lim.v_max}]")
        if lq.bias_bar.size and int(np.abs(lq.bias_bar).max()) > lim.b_max:
            problems.append(
                f"layer '{name}': |bias| {int(np.abs(lq.bias_bar).max())} > {lim.b_max}"
            )
    return problems


def save_quant(result: QuantizationResult, quant_path: str, blob_path: str):
    """JSON document plus integer tensors in a SPKF container."""
    tensors = {}
    for name, lq in result.layers.items():
        tensors[f"{name}/mantissas"] = lq.mantissas.astype("<i4")
        tensors[f"{name}/bias_bar"] = lq.bias_bar.astype("<i4")
    offsets = blob.write_blob(blob_path, tensors)
    doc = {
        "format": QUANT_FORMAT,
        "version": QUANT_VERSION,
        "tensor_blob": os.path.basename(blob_path),
        "delta_u": result.delta_u,
        "delta_v": result.delta_v,
        "y_hat": result.y_hat,
        "q": result.q,
        "v_th": result.v_th,
        "limits": {
            "mantissa_max": result.limits.mantissa_max,
            "u_max": result.limits.u_max,
            "v_max": result.limits.v_max,
            "b_max": result.limits.b_max,
            "decay_bits": result.limits.decay_bits,
        },
        "layers": {
            name: {
                "exponent": lq.exponent,
                "scale": lq.scale,
                "v_th_bar": lq.v_th_bar,
                "mantissas": {"tensor": f"{name}/mantissas",
                              "offset": offsets[f"{name}/mantissas"]},
                "bias_bar": {"tensor": f"{name}/bias_bar",
                             "offset": offsets[f"{name}/bias_bar"]},
                "trace": [list(t) for t in lq.trace],
            }
            for name, lq in result.layers.items()
        },
    }
    with open(quant_path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_quant(quant_path: str) -> QuantizationResult:
    with open(quant_path) as fh:
        doc = json.load(fh)
    if doc.get("format") != QUANT_FORMAT:
        raise QuantizationError(f"{quant_path}: not a quantization document")
    if doc.get("version") != QUANT_VERSION:
        raise QuantizationError(f"{quant_path}: unsupported version {doc.get('version')}")
    blob_path = os.path.join(os.path.dirname(os.path.abspath(quant_path)),
                             doc["tensor_blob"])
    tensors = blob.read_blob(blob_path)
    layers = {}
    for name, entry in doc["layers"].items():
        layers[name] = LayerQuant(
            name=name,
            mantissas=tensors[entry["mantissas"]["tensor"]],
            exponent=entry["exponent"],
            scale=entry["scale"],
            v_th_bar=entry["v_th_bar"],
            bias_bar=tensors[entry["bias_bar"]["tensor"]],
            trace=[tuple(t) for t in entry["trace"]],
        )
    return QuantizationResult(
        layers=layers,
        delta_u=doc["delta_u"],
        delta_v=doc["delta_v"],
        y_hat=doc["y_hat"],
        q=doc["q"],
        v_th=doc["v_th"],
        limits=ChipLimits(**doc["limits"]),
    )
