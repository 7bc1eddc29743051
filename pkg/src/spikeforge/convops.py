"""Raw convolution arithmetic shared by the trainer and the fixed-point simulator.

Everything is NHWC, non-padded, and dtype-agnostic: float64 during
training, int64 during simulation.  Contractions go through np.einsum
without BLAS dispatch so results do not depend on thread count.
"""

import numpy as np


def window_index(h: int, w: int, kernel: int, stride: int):
    """Index arrays (ho, wo, k, k) selecting each conv window's pixels."""
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kernel}/stride {stride} does not fit {h}x{w}")
    ys = (np.arange(ho) * stride)[:, None] + np.arange(kernel)[None, :]
    xs = (np.arange(wo) * stride)[:, None] + np.arange(kernel)[None, :]
    yy = np.broadcast_to(ys[:, None, :, None], (ho, wo, kernel, kernel))
    xx = np.broadcast_to(xs[None, :, None, :], (ho, wo, kernel, kernel))
    return yy, xx


def conv_forward(x, weights, stride: int):
    """x (b, h, w, cin) * weights (k, k, cin, cout) -> (b, ho, wo, cout)."""
    k = weights.shape[0]
    yy, xx = window_index(x.shape[1], x.shape[2], k, stride)
    win = x[:, yy, xx, :]
    return np.einsum("bhwklc,klco->bhwo", win, weights, optimize=False)


def conv_backward(x, weights, dout, stride: int):
    """Gradients of conv_forward: (dx, dweights, dbias)."""
    k = weights.shape[0]
    yy, xx = window_index(x.shape[1], x.shape[2], k, stride)
    win = x[:, yy, xx, :]
    dw = np.einsum("bhwklc,bhwo->klco", win, dout, optimize=False)
    db = dout.sum(axis=(0, 1, 2))
    contrib = np.einsum("bhwo,klco->bhwklc", dout, weights, optimize=False)
    dx = np.zeros_like(x)
    for b in range(x.shape[0]):
        np.add.at(dx[b], (yy, xx), contrib[b])
    return dx, dw, db


def deconv_forward(x, weights):
    """2x2 stride-2 transposed conv: x (b, h, w, cin) -> (b, 2h, 2w, cout)."""
    b, h, w, _ = x.shape
    cout = weights.shape[3]
    out = np.zeros((b, 2 * h, 2 * w, cout), dtype=x.dtype)
    for di in range(2):
        for dj in range(2):
            out[:, di::2, dj::2, :] = np.einsum(
                "bhwc,co->bhwo", x, weights[di, dj], optimize=False
            )
    return out


def deconv_backward(x, weights, dout):
    dw = np.zeros_like(weights)
    dx = np.zeros_like(x)
    for di in range(2):
        for dj in range(2):
            sl = dout[:, di::2, dj::2, :]
            dw[di, dj] = np.einsum("bhwc,bhwo->co", x, sl, optimize=False)
            dx += np.einsum("bhwo,co->bhwc", sl, weights[di, dj], optimize=False)
    db = dout.sum(axis=(0, 1, 2))
    return dx, dw, db


def center_crop(x, th: int, tw: int):
    """Center crop spatial axes of (b, h, w, c) or (h, w) arrays."""
    h, w = (x.shape[1], x.shape[2]) if x.ndim == 4 else (x.shape[0], x.shape[1])
    oy, ox = (h - th) // 2, (w - tw) // 2
    if oy < 0 or ox < 0:
        raise ValueError(f"cannot crop {h}x{w} to {th}x{tw}")
    if x.ndim == 4:
        return x[:, oy:oy + th, ox:ox + tw, :]
    return x[oy:oy + th, ox:ox + tw]
