import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cmr_orient import orientation as O

# Display pictures are lists of rows; arrays are indexed [x, y] (x = column).
PROBE = [[1, 2], [3, 4]]
PICTURES = {
    0: [[1, 2], [3, 4]],
    1: [[2, 1], [4, 3]],
    2: [[3, 4], [1, 2]],
    3: [[4, 3], [2, 1]],
    4: [[1, 3], [2, 4]],
    5: [[3, 1], [4, 2]],
    6: [[2, 4], [1, 3]],
    7: [[4, 2], [3, 1]],
}


def from_picture(rows):
    return np.array(rows).T


def to_picture(arr):
    return arr.T.tolist()


def source_coord(label, x, y, sx, sy):
    """Source (x, y) feeding target (x, y), 0-based; sx/sy are source sizes."""
    return {
        0: (x, y),
        1: (sx - 1 - x, y),
        2: (x, sy - 1 - y),
        3: (sx - 1 - x, sy - 1 - y),
        4: (y, x),
        5: (y, sy - 1 - x),
        6: (sx - 1 - y, x),
        7: (sx - 1 - y, sy - 1 - x),
    }[label]


def oracle_apply(vol, label):
    sx, sy, sz = vol.shape
    tx, ty = (sy, sx) if label >= 4 else (sx, sy)
    out = np.empty((tx, ty, sz), dtype=vol.dtype)
    for x in range(tx):
        for y in range(ty):
            out[x, y, :] = vol[source_coord(label, x, y, sx, sy)]
    return out


def asym_grid():
    return np.arange(24).reshape(3, 4, 2)


def brute_force_label(vol, result):
    matches = [
        k for k in range(8) if O.apply_orientation(vol, k).shape == result.shape and np.array_equal(O.apply_orientation(vol, k), result)
    ]
    assert len(matches) == 1
    return matches[0]


@pytest.mark.parametrize("label", range(8))
def test_corner_pictures(label):
    out = O.apply_orientation_2d(from_picture(PROBE), label)
    assert to_picture(out) == PICTURES[label]


@pytest.mark.parametrize("label", range(8))
def test_matches_coordinate_oracle(label):
    vol = asym_grid()
    assert np.array_equal(O.apply_orientation(vol, label), oracle_apply(vol, label))


def test_horizontal_flip_volume_example():
    vol = from_picture(PROBE)[:, :, None]
    assert to_picture(O.apply_orientation(vol, 1)[:, :, 0]) == [[2, 1], [4, 3]]


def test_label_zero_is_a_copy():
    vol = asym_grid()
    out = O.apply_orientation(vol, 0)
    assert np.array_equal(out, vol)
    out[0, 0, 0] = 99
    assert vol[0, 0, 0] == 0


def test_one_pixel_fixed_point():
    img = np.array([[7.0]])
    for k in range(8):
        assert np.array_equal(O.apply_orientation_2d(img, k), img)


def test_inverse_table_by_brute_force():
    vol = asym_grid()
    for k in range(8):
        inv = [j for j in range(8) if np.array_equal(oracle_apply(oracle_apply(vol, k), j), vol)]
        assert inv == [O.inverse(k)]
    assert O.inverse(0) == 0
    assert O.inverse(5) == 6 and O.inverse(6) == 5
    for k in (1, 2, 3, 4, 7):
        assert O.inverse(k) == k


def test_compose_table_by_brute_force():
    vol = asym_grid()
    for a, b in itertools.product(range(8), repeat=2):
        assert O.compose(a, b) == brute_force_label(vol, oracle_apply(oracle_apply(vol, a), b))
    assert O.compose(1, 2) == 3
    assert O.compose(5, 5) == 3


def test_group_laws():
    for k in range(8):
        assert O.compose(k, 0) == O.compose(0, k) == k
        assert O.compose(k, O.inverse(k)) == 0
    for a, b, c in itertools.product(range(8), repeat=3):
        assert O.compose(O.compose(a, b), c) == O.compose(a, O.compose(b, c))
    assert all(O.compose(a, b) in range(8) for a, b in itertools.product(range(8), repeat=2))


def test_element_orders():
    for k in (1, 2, 3, 4, 7):
        assert O.compose(k, k) == 0
    for k in (5, 6):
        assert O.compose(k, k) != 0
        assert O.compose(k, O.compose(k, O.compose(k, k))) == 0


@pytest.mark.parametrize(
    "shape,label,expected",
    [((10, 12, 5), 3, (10, 12, 5)), ((10, 12, 5), 4, (12, 10, 5)), ((7, 7, 1), 6, (7, 7, 1))],
)
def test_output_shape(shape, label, expected):
    assert O.output_shape(shape, label) == expected


def test_swaps_axes():
    assert {k for k in range(8) if O.swaps_axes(k)} == {4, 5, 6, 7}


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        O.apply_orientation(np.zeros((2, 2)), 1)
    with pytest.raises(ValueError):
        O.apply_orientation_2d(np.zeros((2, 2, 2)), 1)
    for bad in (-1, 8, 2.5, True):
        with pytest.raises(ValueError):
            O.inverse(bad)


volumes = hnp.arrays(
    np.int32,
    hnp.array_shapes(min_dims=3, max_dims=3, min_side=1, max_side=6),
    elements=st.integers(-1000, 1000),
)


@settings(max_examples=60, deadline=None)
@given(volumes, st.integers(0, 7), st.integers(0, 7))
def test_properties(vol, a, b):
    out = O.apply_orientation(vol, a)
    assert out.shape == O.output_shape(vol.shape, a)
    # permutation of voxels
    assert np.array_equal(np.sort(out, axis=None), np.sort(vol, axis=None))
    assert np.array_equal(O.apply_orientation(out, O.inverse(a)), vol)
    assert np.array_equal(O.apply_orientation(out, b), O.apply_orientation(vol, O.compose(a, b)))
    for z in range(vol.shape[2]):
        assert np.array_equal(out[:, :, z], O.apply_orientation_2d(vol[:, :, z], a))
