"""The eight in-plane orientation classes and their action on voxel grids.

Arrays are indexed ``a[x, y, z]`` with ``x`` the display column and ``y`` the
display row, so the corner picture ``1 2 / 3 4`` puts corner 1 at
``(0, 0)`` and corner 2 at ``(sx - 1, 0)``.

====== =============================== ===============================
label  operation                        target[x, y] =
====== =============================== ===============================
0      identity                         source[x, y]
1      horizontal flip                  source[sx-1-x, y]
2      vertical flip                    source[x, sy-1-y]
3      rotate 180                       source[sx-1-x, sy-1-y]
4      flip along main diagonal         source[y, x]
5      rotate 90 clockwise              source[y, sy-1-x]
6      rotate 270 clockwise             source[sx-1-y, x]
7      flip along secondary diagonal    source[sx-1-y, sy-1-x]
====== =============================== ===============================

In the last column ``sx``/``sy`` are the *source* sizes.
"""

from __future__ import annotations

import numpy as np

NUM_ORIENTATIONS = 8

NAMES = (
    "identity",
    "horizontal flip",
    "vertical flip",
    "rotate 180",
    "flip main diagonal",
    "rotate 90 clockwise",
    "rotate 270 clockwise",
    "flip secondary diagonal",
)

AXIS_SWAPPING = frozenset({4, 5, 6, 7})

# COMPOSE[first][second]: applying `first` then `second` equals this label.
COMPOSE = (
    (0, 1, 2, 3, 4, 5, 6, 7),
    (1, 0, 3, 2, 6, 7, 4, 5),
    (2, 3, 0, 1, 5, 4, 7, 6),
    (3, 2, 1, 0, 7, 6, 5, 4),
    (4, 5, 6, 7, 0, 1, 2, 3),
    (5, 4, 7, 6, 2, 3, 0, 1),
    (6, 7, 4, 5, 1, 0, 3, 2),
    (7, 6, 5, 4, 3, 2, 1, 0),
)

INVERSE = tuple(row.index(0) for row in COMPOSE)


def check_label(label) -> int:
    """Return ``label`` as a plain int, raising ``ValueError`` if it is not in 0..7."""
    if isinstance(label, bool) or int(label) != label or not 0 <= int(label) < NUM_ORIENTATIONS:
        raise ValueError(f"orientation label must be an integer in [0, 7], got {label!r}")
    return int(label)


def swaps_axes(label: int) -> bool:
    return check_label(label) in AXIS_SWAPPING


def inverse(label: int) -> int:
    return INVERSE[check_label(label)]


def compose(first: int, second: int) -> int:
    return COMPOSE[check_label(first)][check_label(second)]


def output_shape(shape, label: int) -> tuple:
    shape = tuple(int(s) for s in shape)
    if swaps_axes(label):
        return (shape[1], shape[0]) + shape[2:]
    return shape


def _view(a: np.ndarray, label: int) -> np.ndarray:
    if label == 0:
        return a
    if label == 1:
        return a[::-1]
    if label == 2:
        return a[:, ::-1]
    if label == 3:
        return a[::-1, ::-1]
    if label == 4:
        return a.swapaxes(0, 1)
    if label == 5:
        return a[:, ::-1].swapaxes(0, 1)
    if label == 6:
        return a[::-1].swapaxes(0, 1)
    return a[::-1, ::-1].swapaxes(0, 1)


def apply_orientation(volume: np.ndarray, label: int) -> np.ndarray:
    """Permute the voxels of a ``(sx, sy, sz)`` array; z is untouched.

    Always returns a new C-contiguous array, even for label 0.
    """
    label = check_label(label)
    volume = np.asarray(volume)
    if volume.ndim != 3:
        raise ValueError(f"expected a 3D volume, got shape {volume.shape}")
    return np.array(_view(volume, label), order="C", copy=True)


def apply_orientation_2d(image: np.ndarray, label: int) -> np.ndarray:
    label = check_label(label)
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {image.shape}")
    return apply_orientation(image[:, :, None], label)[:, :, 0]
