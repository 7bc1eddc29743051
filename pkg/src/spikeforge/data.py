"""Datasets for the segmentation task: augmentation, synthesis, metrics, PGM io.

Images are float arrays in [0, 1]; labels are binary masks of the cell
class.  The base augmentation turns each source image into five variants
(four rotations plus a mirror), and training examples are random crops of
those variants, area-resized for images and nearest-resized for labels.
"""

import os
import re
from dataclasses import dataclass

import numpy as np


@dataclass
class ImageSample:
    image: np.ndarray  # (h, w) float in [0, 1]
    label: np.ndarray  # (h, w) uint8 in {0, 1}

    def __post_init__(self):
        if self.image.shape != self.label.shape:
            raise ValueError(
                f"image {self.image.shape} and label {self.label.shape} differ"
            )


@dataclass(frozen=True)
class AugmentConfig:
    crop: int
    resize_to: int
    seed: int = 0

    def __post_init__(self):
        if self.crop < 1 or self.resize_to < 1:
            raise ValueError("crop and resize_to must be positive")


def expand_base(samples):
    """Five variants per source: rotations by 0/90/180/270 plus a mirror.

    The mirror flips the original around the vertical axis.  Requires
    square images because of the quarter rotations.
    """
    out = []
    for s in samples:
        if s.image.shape[0] != s.image.shape[1]:
            raise ValueError(f"expand_base needs square images, got {s.image.shape}")
        for k in range(4):
            out.append(ImageSample(np.rot90(s.image, k).copy(),
                                   np.rot90(s.label, k).copy()))
        out.append(ImageSample(np.fliplr(s.image).copy(), np.fliplr(s.label).copy()))
    return out


def _area_weights(src: int, dst: int) -> np.ndarray:
    # row j averages the source interval [j*f, (j+1)*f)
    f = src / dst
    starts = np.arange(dst) * f
    ends = starts + f
    cells = np.arange(src)
    overlap = np.minimum(ends[:, None], cells[None, :] + 1.0)
    overlap -= np.maximum(starts[:, None], cells[None, :])
    return np.clip(overlap, 0.0, None) / f


def resize_area(img: np.ndarray, dst: int) -> np.ndarray:
    """Box-filter resample to dst x dst (exact block mean for integer factors)."""
    wy = _area_weights(img.shape[0], dst)
    wx = _area_weights(img.shape[1], dst)
    tmp = np.einsum("ys,sw->yw", wy, img, optimize=False)
    return np.einsum("yw,xw->yx", tmp, wx, optimize=False)


def resize_nearest(arr: np.ndarray, dst: int) -> np.ndarray:
    def idx(src):
        f = src / dst
        return np.minimum(np.floor((np.arange(dst) + 0.5) * f).astype(int), src - 1)

    return arr[np.ix_(idx(arr.shape[0]), idx(arr.shape[1]))]


def sample_crops(samples, config: AugmentConfig, n: int, return_windows: bool = False):
    """Draw n random crop windows over the variant pool, resized to the target.

    Variant choice and window offsets are uniform under the config seed.
    Labels stay binary: nearest-neighbour resize, then re-thresholded.
    """
    if not samples:
        raise ValueError("sample_crops needs a non-empty sample list")
    c = config.crop
    for s in samples:
        if s.image.shape[0] < c or s.image.shape[1] < c:
            raise ValueError(f"crop {c} exceeds sample of shape {s.image.shape}")
    rng = np.random.default_rng(config.seed)
    out = []
    windows = []
    for _ in range(n):
        v = int(rng.integers(0, len(samples)))
        s = samples[v]
        oy = int(rng.integers(0, s.image.shape[0] - c + 1))
        ox = int(rng.integers(0, s.image.shape[1] - c + 1))
        img = s.image[oy:oy + c, ox:ox + c]
        lbl = s.label[oy:oy + c, ox:ox + c]
        if config.resize_to != c:
            img = resize_area(img, config.resize_to)
            lbl = resize_nearest(lbl, config.resize_to)
        lbl = (lbl > 0.5).astype(np.uint8)
        out.append(ImageSample(np.clip(img, 0.0, 1.0), lbl))
        windows.append((v, oy, ox))
    if return_windows:
        return out, windows
    return out


def _smooth_noise(rng, size: int, cell: int = 8) -> np.ndarray:
    # coarse gaussian grid, bilinearly upsampled; zero mean, unit-ish scale
    cn = size // cell + 2
    coarse = rng.standard_normal((cn, cn))
    x = np.linspace(0.0, cn - 1.0, size)
    i0 = np.floor(x).astype(int)
    i1 = np.minimum(i0 + 1, cn - 1)
    t = x - i0
    rows = coarse[i0][:, :] * (1.0 - t)[:, None] + coarse[i1][:, :] * t[:, None]
    return rows[:, i0] * (1.0 - t)[None, :] + rows[:, i1] * t[None, :]


def synth_cells(seed: int, n: int, size: int):
    """Synthetic microscopy-like samples: soft-edged ellipses on texture.

    Fully determined by the seed.  Each sample's cell-pixel fraction lands
    in roughly [0.1, 0.6]; drawing retries keep outliers out.
    """
    if size < 8:
        raise ValueError(f"size must be >= 8, got {size}")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    out = []
    for _ in range(n):
        for _attempt in range(32):
            k = int(rng.integers(1, 4))
            q_min = np.full((size, size), np.inf)
            for _c in range(k):
                cy, cx = rng.uniform(0.28 * size, 0.72 * size, size=2)
                a = rng.uniform(size / 6.5, size / 3.2)
                b = rng.uniform(size / 6.5, size / 3.2)
                th = rng.uniform(0.0, np.pi)
                dy, dx = yy - cy, xx - cx
                u = (dy * np.cos(th) + dx * np.sin(th)) / a
                v = (-dy * np.sin(th) + dx * np.cos(th)) / b
                q_min = np.minimum(q_min, u * u + v * v)
            label = (q_min <= 1.0).astype(np.uint8)
            frac = float(label.mean())
            if 0.08 <= frac <= 0.60:
                break
        edge = 1.0 / (1.0 + np.exp(-3.0 * (1.0 - q_min)))
        img = 0.25 + 0.08 * _smooth_noise(rng, size) + 0.5 * edge
        img += 0.04 * rng.standard_normal((size, size))
        out.append(ImageSample(np.clip(img, 0.0, 1.0), label))
    return out


def task_samples(seed: int, n: int, size: int):
    """Standard segmentation split: random crops over augmented canvases.

    Canvases are drawn at twice the target size and expanded with the
    rotation/mirror variants, so crops see cell boundaries at arbitrary
    offsets instead of always centered.  Disjoint seeds give disjoint
    canvas sets.
    """
    base = expand_base(synth_cells(seed, max(6, n // 12), 2 * size))
    cfg = AugmentConfig(crop=size, resize_to=size, seed=seed + 1)
    return sample_crops(base, cfg, n)


def _as_mask_batch(arr):
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"expected (h, w) or (batch, h, w) masks, got shape {a.shape}")
    return a.astype(bool)


def pixel_accuracy(pred, gt) -> float:
    p, g = _as_mask_batch(pred), _as_mask_batch(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    return float(np.mean(p == g))


def mean_iou(pred, gt) -> float:
    """Cell-class IoU averaged over samples; an empty union scores 1.0."""
    p, g = _as_mask_batch(pred), _as_mask_batch(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    ious = []
    for i in range(p.shape[0]):
        inter = np.logical_and(p[i], g[i]).sum()
        union = np.logical_or(p[i], g[i]).sum()
        ious.append(1.0 if union == 0 else inter / union)
    return float(np.mean(ious))


def write_pgm(path: str, arr: np.ndarray):
    """8-bit binary PGM (P5)."""
    a = np.ascontiguousarray(arr, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii"))
        fh.write(a.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    m = re.match(rb"P5\s+(?:#.*\s+)?(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise ValueError(f"{path}: not a binary 8-bit PGM")
    w, h, maxval = (int(m.group(i)) for i in (1, 2, 3))
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=m.end())
    return pixels.reshape(h, w).copy()


def save_dataset(samples, dirpath: str):
    """images/NNN.pgm + labels/NNN.pgm, labels stored as 0/255."""
    os.makedirs(os.path.join(dirpath, "images"), exist_ok=True)
    os.makedirs(os.path.join(dirpath, "labels"), exist_ok=True)
    for i, s in enumerate(samples):
        img = np.clip(np.rint(s.image * 255.0), 0, 255).astype(np.uint8)
        write_pgm(os.path.join(dirpath, "images", f"{i:03d}.pgm"), img)
        write_pgm(os.path.join(dirpath, "labels", f"{i:03d}.pgm"), s.label * 255)


def load_dataset(dirpath: str):
    img_dir = os.path.join(dirpath, "images")
    lbl_dir = os.path.join(dirpath, "labels")
    if not (os.path.isdir(img_dir) and os.path.isdir(lbl_dir)):
        raise ValueError(f"{dirpath}: expected images/ and labels/ subdirectories")
    samples = []
    for name in sorted(os.listdir(img_dir)):
        lbl_path = os.path.join(lbl_dir, name)
        if not os.path.exists(lbl_path):
            raise ValueError(f"{dirpath}: no label for image '{name}'")
        img = read_pgm(os.path.join(img_dir, name)).astype(np.float64) / 255.0
        lbl = (read_pgm(lbl_path) > 127).astype(np.uint8)
        samples.append(ImageSample(img, lbl))
    return samples
