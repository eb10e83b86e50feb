import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bilinear_loops
from xycoord.coords import append_coords, grids_for_resolution, make_position_grids
from xycoord.data import resize_bilinear, translate
from xycoord.errors import ShapeError


def test_endpoints_28():
    g = make_position_grids(28, 28)
    assert np.all(g.x_channel[:, 0] == 0) and np.all(g.x_channel[:, 27] == 1)
    assert np.all(g.y_channel[0] == 0) and np.all(g.y_channel[27] == 1)
    assert g.x_channel[5, 13] == pytest.approx(13 / 27, abs=1e-7)
    assert g.x_channel[5, 13] == pytest.approx(0.481481, abs=1e-6)


def test_degenerate_row():
    g = make_position_grids(1, 5)
    assert not g.y_channel.any()
    np.testing.assert_array_equal(g.x_channel, [[0, 0.25, 0.5, 0.75, 1]])


def test_two_by_two():
    g = grids_for_resolution(2, 2)
    np.testing.assert_array_equal(g.x_channel, [[0, 1], [0, 1]])
    np.testing.assert_array_equal(g.y_channel, [[0, 0], [1, 1]])


def test_zero_extent_rejected():
    with pytest.raises(ShapeError):
        make_position_grids(0, 3)


def test_grids_for_resolution_identity():
    a, b = grids_for_resolution(28, 28), make_position_grids(28, 28)
    np.testing.assert_array_equal(a.x_channel, b.x_channel)
    np.testing.assert_array_equal(a.y_channel, b.y_channel)


def test_upsampled_14_grid_equals_direct_28():
    small = make_position_grids(14, 14, np.float64)
    big = make_position_grids(28, 28, np.float64)
    np.testing.assert_allclose(resize_bilinear(small.x_channel, 28, 28), big.x_channel, atol=1e-6)
    np.testing.assert_allclose(resize_bilinear(small.y_channel, 28, 28), big.y_channel, atol=1e-6)
    # independent per-pixel interpolation agrees too
    np.testing.assert_allclose(bilinear_loops(small.x_channel, 28, 28), big.x_channel, atol=1e-6)


def test_append_coords_channels():
    img = np.zeros((1, 28, 28), np.float32)
    out = append_coords(img)
    g = make_position_grids(28, 28)
    assert out.shape == (3, 28, 28)
    assert not out[0].any()
    np.testing.assert_array_equal(out[1], g.x_channel)
    np.testing.assert_array_equal(out[2], g.y_channel)


def test_append_coords_passthrough_and_translation_independence():
    img = np.random.default_rng(0).uniform(size=(1, 28, 28)).astype(np.float32)
    out = append_coords(img)
    assert np.array_equal(out[0], img[0])
    shifted = append_coords(translate(img, 3, -2))
    np.testing.assert_array_equal(shifted[1:], out[1:])


def test_append_coords_batch_and_errors():
    batch = np.random.default_rng(1).uniform(size=(4, 1, 9, 7)).astype(np.float32)
    out = append_coords(batch)
    assert out.shape == (4, 3, 9, 7)
    np.testing.assert_array_equal(out[:, 0], batch[:, 0])
    np.testing.assert_array_equal(out[2, 1:], make_position_grids(9, 7).stacked())
    with pytest.raises(ShapeError, match="grayscale"):
        append_coords(np.zeros((3, 5, 5)))
    with pytest.raises(ShapeError, match="grayscale"):
        append_coords(np.zeros((2, 2, 5, 5)))


@given(h=st.integers(1, 64), w=st.integers(1, 64))
@settings(max_examples=60, deadline=None)
def test_grid_invariants(h, w):
    g = make_position_grids(h, w)
    for ch in (g.x_channel, g.y_channel):
        assert ch.min() >= 0 and ch.max() <= 1
    assert np.all(g.x_channel == g.x_channel[0])
    assert np.all(g.y_channel == g.y_channel[:, :1])
    if w >= 2:
        assert np.all(np.diff(g.x_channel, axis=1) > 0)
    if h >= 2:
        assert np.all(np.diff(g.y_channel, axis=0) > 0)
