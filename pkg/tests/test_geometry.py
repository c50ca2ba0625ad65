import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from satvos.geometry import (
    Box,
    CropTransform,
    crop_and_resize,
    make_search_region,
    paste_back,
)

coords = st.floats(-500, 500, allow_nan=False)
sizes = st.floats(1.0, 300.0, allow_nan=False)


def test_box_rejects_degenerate():
    with pytest.raises(ValueError):
        Box(0, 0, 0, 5)
    with pytest.raises(ValueError):
        Box(0, 0, 5, -1)
    assert Box.try_make(0, 0, -1, 2) is None


@given(coords, coords, sizes, sizes)
def test_corner_round_trip(cx, cy, w, h):
    b = Box(cx, cy, w, h)
    b2 = Box.from_corners(*b.corners())
    assert b2.cx == pytest.approx(cx, abs=1e-9)
    assert b2.w == pytest.approx(w, rel=1e-12, abs=1e-9)
    assert b2.h == pytest.approx(h, rel=1e-12, abs=1e-9)


def test_search_region_side():
    t = make_search_region(Box(50, 50, 20, 20), 1.0, 257)
    assert t.source_box.w == 40.0
    assert t.scale_x == pytest.approx(257 / 40)
    assert (t.source_box.cx, t.source_box.cy) == (50, 50)


@given(sizes)
def test_square_box_doubles(s):
    t = make_search_region(Box(0, 0, s, s), 1.0, 10)
    assert t.source_box.w == pytest.approx(2 * s, rel=1e-12)


def test_saliency_and_similarity_regions_share_center():
    box = Box(80, 60, 30, 20)
    sal = make_search_region(box, 1.0, 257)
    sim = make_search_region(box, 2.0, 303)
    assert sal.output_size == 257 and sim.output_size == 303
    assert sim.source_box.w == pytest.approx(2 * sal.source_box.w)
    assert sim.source_box.cx == sal.source_box.cx


def test_search_region_validation():
    with pytest.raises(ValueError):
        make_search_region(Box(0, 0, 2, 2), 0.5, 10)
    with pytest.raises(ValueError):
        make_search_region(Box(0, 0, 2, 2), 1.0, 0)


@given(coords, coords, sizes, sizes, st.floats(1, 4), st.integers(1, 400),
       st.floats(0, 1), st.floats(0, 1))
def test_transform_inverse(cx, cy, w, h, ctx, n, a, b):
    t = make_search_region(Box(cx, cy, w, h), ctx, n)
    x0, y0, x1, y1 = t.source_box.corners()
    x, y = x0 + a * (x1 - x0), y0 + b * (y1 - y0)
    u, v = t.to_crop(x, y)
    xb, yb = t.to_frame(u, v)
    assert abs(xb - x) < 1e-6 and abs(yb - y) < 1e-6


@given(coords, coords, sizes, sizes, st.floats(-100, 100), st.floats(-100, 100))
def test_translation_equivariance(cx, cy, w, h, dx, dy):
    t1 = make_search_region(Box(cx, cy, w, h), 1.5, 64)
    t2 = make_search_region(Box(cx + dx, cy + dy, w, h), 1.5, 64)
    assert t2.source_box.cx - t1.source_box.cx == pytest.approx(dx, abs=1e-9)
    assert t2.source_box.cy - t1.source_box.cy == pytest.approx(dy, abs=1e-9)
    assert t2.source_box.w == t1.source_box.w


def test_identity_crop_is_exact():
    rng = np.random.default_rng(0)
    frame = rng.random((17, 17, 3))
    t = CropTransform(Box(8, 8, 17, 17), 17)
    np.testing.assert_array_equal(crop_and_resize(frame, t), frame)


def test_crop_outside_frame_is_fill():
    frame = np.arange(48, dtype=float).reshape(4, 4, 3)
    t = CropTransform(Box(100, 100, 5, 5), 6)
    out = crop_and_resize(frame, t)
    np.testing.assert_allclose(out, np.broadcast_to(frame.mean(axis=(0, 1)), (6, 6, 3)))
    np.testing.assert_array_equal(crop_and_resize(frame[..., 0], t, fill=7.0), 7.0)


def test_checkerboard_upscale_matches_hand_weights():
    a, b = 0.0, 1.0
    frame = np.array([[a, b], [b, a]])
    t = CropTransform(Box(0.5, 0.5, 2, 2), 4)
    # samples at x = -0.25, 0.25, 0.75, 1.25, clamped to the outer pixel centers
    wx = np.array([0.0, 0.25, 0.75, 1.0])
    expected = np.empty((4, 4))
    for i, fy in enumerate(wx):
        for j, fx in enumerate(wx):
            top = (1 - fx) * frame[0, 0] + fx * frame[0, 1]
            bot = (1 - fx) * frame[1, 0] + fx * frame[1, 1]
            expected[i, j] = (1 - fy) * top + fy * bot
    np.testing.assert_allclose(crop_and_resize(frame, t), expected, atol=1e-12)
    assert expected[1, 1] == pytest.approx(0.375)


def test_paste_zero_and_aligned_one():
    t = CropTransform(Box(7, 12, 5, 9), 13)  # edges at 4.5..9.5, 7.5..16.5
    assert not paste_back(np.zeros((13, 13)), t, (30, 20)).any()
    out = paste_back(np.ones((13, 13)), t, (30, 20))
    expected = np.zeros((30, 20))
    expected[8:17, 5:10] = 1
    np.testing.assert_array_equal(out, expected)


def test_paste_shape_mismatch():
    t = CropTransform(Box(7, 12, 5, 9), 13)
    with pytest.raises(ValueError):
        paste_back(np.ones((12, 12)), t, (30, 20))


def test_paste_antialiases_fractional_edges():
    t = CropTransform(Box(5.25, 5.0, 4.0, 4.0), 8)  # x from 3.25 to 7.25
    out = paste_back(np.ones((8, 8)), t, (12, 12))
    assert out[5, 3] == pytest.approx(0.25)
    assert out[5, 7] == pytest.approx(0.75)
    assert out[5, 5] == 1.0


def _blob(shape, cx, cy, sigma):
    yy, xx = np.mgrid[: shape[0], : shape[1]]
    return np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))


@pytest.mark.parametrize("n", [33, 65, 129])
def test_crop_paste_round_trip_smooth_blob(n):
    m = _blob((100, 120), 60, 48, 9.0)
    t = make_search_region(Box(60, 48, 24, 24), 1.0, n)
    back = paste_back(crop_and_resize(m, t, fill=0.0), t, m.shape)
    x0, y0, x1, y1 = t.source_box.corners()
    yy, xx = np.mgrid[:100, :120]
    inside = (xx - 0.5 >= x0) & (xx + 0.5 <= x1) & (yy - 0.5 >= y0) & (yy + 0.5 <= y1)
    assert np.abs(back - m)[inside].max() < 0.05


@settings(max_examples=40, deadline=None)
@given(st.floats(30, 70), st.floats(30, 70), st.floats(12, 30), st.sampled_from([33, 64, 97]))
def test_mass_preserved_for_large_blobs(cx, cy, side, n):
    t = make_search_region(Box(cx, cy, side, side), 1.0, n)
    yy, xx = np.mgrid[:100, :100]
    # square blob of the box's size: a quarter of the crop area
    frame = ((np.abs(xx - cx) <= side / 2) & (np.abs(yy - cy) <= side / 2)).astype(float)
    back = paste_back(crop_and_resize(frame, t, fill=0.0), t, frame.shape)
    assert abs(back.sum() - frame.sum()) <= 0.1 * frame.sum()
