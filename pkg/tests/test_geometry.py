import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from searth.errors import ConfigError, ShapeError
from searth.geometry import (
    BLOCK,
    LatLonGrid,
    earth_attention_mask,
    latitude_weights,
    pole_seam_mask,
    regrid_latitudes,
    regrid_quarter_to_one,
    window_partition,
    window_reverse,
    window_token_positions,
)


def test_latitude_weights_worked_example():
    # cos(45) / mean(cos) over [-45, 0, 45]
    w = latitude_weights([-45.0, 0.0, 45.0])
    np.testing.assert_allclose(w, [0.87867966, 1.24264069, 0.87867966], atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 200))
def test_latitude_weights_sum_to_row_count(n):
    w = LatLonGrid.regular(n, 2 * n).weights()
    assert abs(w.sum() - n) <= 1e-9
    assert np.all(w > 0)


def test_regular_grid_is_cell_centred_and_symmetric():
    g = LatLonGrid.regular(4, 8)
    np.testing.assert_allclose(g.latitudes, [67.5, 22.5, -22.5, -67.5])
    np.testing.assert_allclose(g.longitudes, np.arange(8) * 45.0)


def test_grid_rejects_out_of_range_latitude():
    with pytest.raises(ConfigError):
        LatLonGrid(np.array([95.0, 0.0]), np.array([0.0, 180.0]))


def test_regrid_shape_and_constant_field():
    out = regrid_quarter_to_one(np.full((721, 1440), 3.25))
    assert out.shape == (180, 360)
    assert np.all(out == 3.25)
    stacked = regrid_quarter_to_one(np.zeros((2, 721, 1440)))
    assert stacked.shape == (2, 180, 360)


def test_regrid_block_mean_worked_example():
    field = np.zeros((721, 1440))
    field[0:4, 0:4] = np.arange(16).reshape(4, 4)
    field[720] = 1e6  # south-pole row is dropped
    out = regrid_quarter_to_one(field)
    assert out[0, 0] == 7.5
    assert out[179, 359] == 0.0


def test_regrid_rejects_wrong_shape():
    with pytest.raises(ShapeError):
        regrid_quarter_to_one(np.zeros((720, 1440)))


def test_regrid_latitudes_are_block_means():
    lat = 90 - 0.25 * np.arange(721)
    out = regrid_latitudes(lat)
    assert out.shape == (180,)
    assert out[0] == pytest.approx(89.625)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([(4, 4, 2, 2), (6, 12, 3, 3), (8, 8, 4, 2), (4, 6, 2, 3)]), st.integers(1, 3), st.data())
def test_window_partition_roundtrip(dims, C, data):
    H, W, wh, ww = dims
    x = data.draw(hnp.arrays(np.float64, (C, H, W), elements=st.floats(-5, 5)))
    win = window_partition(x, wh, ww)
    assert win.shape == ((H // wh) * (W // ww), wh * ww, C)
    np.testing.assert_array_equal(window_reverse(win, H, W, wh, ww), x)


def test_token_position_worked_example():
    pos = window_token_positions(4, 4, 2, 2)
    # grid cell (2, 3) sits in window 3 at local index 1
    assert tuple(pos[3, 1]) == (2, 3)


def test_small_mask_matches_oracle_and_expected_blocks():
    m = earth_attention_mask(4, 4, 2, 2, 1, 1, "earth")
    np.testing.assert_array_equal(m, pole_seam_mask(4, 4, 2, 2, 1, 1))
    # only the bottom window row straddles the pole seam
    assert np.all(m[:2] == 0)
    blocked = m[2] == BLOCK
    np.testing.assert_array_equal(blocked, [[0, 0, 1, 1], [0, 0, 1, 1], [1, 1, 0, 0], [1, 1, 0, 0]])


def test_zero_shift_is_unmasked():
    assert np.all(earth_attention_mask(8, 8, 4, 4, 0, 0, "planar") == 0)


@pytest.mark.parametrize("args", [(6, 8, 4, 4, 1, 1), (8, 8, 4, 4, 4, 1), (8, 8, 4, 4, 1, -1)])
def test_mask_rejects_bad_geometry(args):
    with pytest.raises((ShapeError, ConfigError)):
        earth_attention_mask(*args)


def test_mask_rejects_unknown_mode():
    with pytest.raises(ConfigError):
        earth_attention_mask(8, 8, 4, 4, 2, 2, "torus")


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([2, 3, 4]), st.integers(1, 4), st.integers(1, 4), st.data())
def test_earth_mask_properties(win, nh, nw, data):
    H, W = win * nh, win * nw
    sh = data.draw(st.integers(0, win - 1))
    sw = data.draw(st.integers(0, win - 1))
    earth = earth_attention_mask(H, W, win, win, sh, sw, "earth")
    planar = earth_attention_mask(H, W, win, win, sh, sw, "planar")
    if sh or sw:
        np.testing.assert_array_equal(earth, pole_seam_mask(H, W, win, win, sh, sw))
    # earth blocks are a subset of planar blocks
    assert not np.any((earth == BLOCK) & (planar == 0))
    # symmetric, zero diagonal
    np.testing.assert_array_equal(earth, earth.transpose(0, 2, 1))
    assert np.all(np.diagonal(earth, axis1=1, axis2=2) == 0)
    # longitude-invariant: every window in a row band carries the same mask
    per_row = earth.reshape(nh, nw, win * win, win * win)
    assert np.all(per_row == per_row[:, :1])
