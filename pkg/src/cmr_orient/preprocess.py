"""Turning raw slices into 3-channel network inputs.

Each slice is clipped at 60%, 80% and 100% of its own maximum, every clipped
copy is histogram-equalised, and the three results are stacked as channels
and resized to the network's square input. Augmentation (small rotation,
random crop, resize back) operates on the raw slice, before any of that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .nifti import Volume

TRUNCATION_FRACTIONS = (0.6, 0.8, 1.0)
N_BINS = 256


@dataclass
class PreprocessedSlice:
    channels: np.ndarray  # (3, size, size) float32 in [0, 1]
    source_slice_index: int = 0


@dataclass(frozen=True)
class AugmentConfig:
    max_rotation_deg: float = 10.0
    crop_scale_min: float = 0.8
    enabled: bool = True

    def __post_init__(self):
        if not 0 <= self.max_rotation_deg <= 15:
            raise ValueError(f"max_rotation_deg must be in [0, 15], got {self.max_rotation_deg}")
        if not 0 < self.crop_scale_min <= 1:
            raise ValueError(f"crop_scale_min must be in (0, 1], got {self.crop_scale_min}")


def slice_volume(volume) -> list:
    data = volume.data if isinstance(volume, Volume) else np.asarray(volume, dtype=np.float32)
    return [np.ascontiguousarray(data[:, :, z]) for z in range(data.shape[2])]


def truncate(image: np.ndarray, fraction: float) -> np.ndarray:
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    image = np.asarray(image, dtype=np.float32)
    threshold = np.float32(fraction) * image.max()
    return np.minimum(image, threshold)


def equalize(image: np.ndarray) -> np.ndarray:
    """Histogram equalisation over 256 bins spanning the image's own range.

    Each pixel maps to the fraction of pixels whose bin is <= its bin. A
    constant image maps to zeros.
    """
    image = np.asarray(image)
    lo = float(image.min())
    hi = float(image.max())
    if not hi > lo:
        return np.zeros(image.shape, dtype=np.float32)
    scaled = (image.astype(np.float64) - lo) / (hi - lo)
    bins = np.minimum((scaled * N_BINS).astype(np.intp), N_BINS - 1)
    hist = np.bincount(bins.ravel(), minlength=N_BINS)
    cdf = np.cumsum(hist) / bins.size
    return cdf[bins].astype(np.float32)


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres, edge clamped
    coords = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    coords = np.clip(coords, 0, n_in - 1)
    i0 = np.floor(coords).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = (coords - i0).astype(np.float32)
    return i0, i1, t


def resize_bilinear(image: np.ndarray, shape) -> np.ndarray:
    """Bilinear resize of the two leading axes; identity when the shape is unchanged."""
    image = np.asarray(image, dtype=np.float32)
    h, w = int(shape[0]), int(shape[1])
    if image.shape[:2] == (h, w):
        return image.copy()
    i0, i1, t = _axis_weights(image.shape[0], h)
    t = t.reshape((-1,) + (1,) * (image.ndim - 1))
    rows = image[i0] * (1 - t) + image[i1] * t
    j0, j1, u = _axis_weights(image.shape[1], w)
    u = u.reshape((1, -1) + (1,) * (image.ndim - 2))
    return np.ascontiguousarray(rows[:, j0] * (1 - u) + rows[:, j1] * u, dtype=np.float32)


def input_channels(image: np.ndarray, size: int) -> np.ndarray:
    """The ``(3, size, size)`` float32 network input for one raw slice."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"expected a non-empty 2D image, got shape {image.shape}")
    stacked = np.stack([equalize(truncate(image, f)) for f in TRUNCATION_FRACTIONS], axis=-1)
    out = resize_bilinear(stacked, (size, size))
    # bilinear weights are convex, but guard against float rounding past 1
    np.clip(out, 0.0, 1.0, out=out)
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def make_input(image: np.ndarray, size: int, source_slice_index: int = 0) -> PreprocessedSlice:
    return PreprocessedSlice(input_channels(image, size), source_slice_index)


def make_batch(images, size: int) -> np.ndarray:
    return np.stack([input_channels(img, size) for img in images])


def augment(image: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Random small rotation, random crop, resize back to the input shape."""
    image = np.asarray(image, dtype=np.float32)
    if not config.enabled:
        return image.copy()
    h, w = image.shape
    angle = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg)
    out = image
    if angle != 0.0:
        out = ndimage.rotate(image, angle, reshape=False, order=1, mode="constant", cval=0.0)

    ch = max(1, int(round(rng.uniform(config.crop_scale_min, 1.0) * h)))
    cw = max(1, int(round(rng.uniform(config.crop_scale_min, 1.0) * w)))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    out = out[top : top + ch, left : left + cw]
    return resize_bilinear(out, (h, w))
