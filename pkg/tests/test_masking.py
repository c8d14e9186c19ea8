import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr

from lipdub.core import MOUTH_JAW_LANDMARKS, LandmarkSet
from lipdub.errors import ValidationError
from lipdub.masking import (
    PolyMask,
    RectMask,
    apply_rect_mask,
    apply_reference_mask,
    build_face_polygon,
    convex_hull,
    polygon_area,
    rasterize,
    rasterize_feathered,
)

from conftest import crop_landmarks


def test_default_rect_pixel_bounds():
    m = RectMask.default()
    assert m.as_list() == [0.08, 0.28, 0.92, 0.95]
    assert m.pixel_bounds(256, 256) == (20, 71, 236, 244)
    out = apply_rect_mask(np.ones((256, 256)), m)
    assert out[71:244, 20:236].sum() == 0
    assert out.sum() == 256 * 256 - (236 - 20) * (244 - 71)


def test_full_rect_zeroes_everything():
    assert apply_rect_mask(np.ones((8, 8, 3)), RectMask(0, 0, 1, 1)).sum() == 0


def test_reference_mask_interior_count_and_zero():
    m = RectMask.default()
    assert apply_reference_mask(np.ones((256, 256)), m).sum() == (236 - 20) * (244 - 71)
    assert apply_reference_mask(np.zeros((256, 256, 3)), m).sum() == 0


@settings(max_examples=50, deadline=None)
@given(
    st.integers(0, 2**31),
    st.floats(0, 0.45), st.floats(0, 0.45), st.floats(0.55, 1), st.floats(0.55, 1),
    st.integers(3, 40), st.integers(3, 40),
)
def test_rect_and_reference_masks_partition(seed, x1, y1, x2, y2, h, w):
    m = RectMask(x1, y1, x2, y2)
    f = np.random.default_rng(seed).random((h, w, 3))
    a, b = apply_rect_mask(f, m), apply_reference_mask(f, m)
    np.testing.assert_array_equal(a + b, f)
    assert np.all((a == 0) | (b == 0))


def test_rect_validation():
    with pytest.raises(ValidationError):
        RectMask(0.5, 0.1, 0.4, 0.9)
    with pytest.raises(ValidationError):
        RectMask(-0.1, 0.1, 0.4, 0.9)


def test_symmetric_face_polygon_symmetric():
    poly = build_face_polygon(crop_landmarks(), 12.0)
    v = poly.vertices
    mirrored = np.column_stack([256.0 - v[:, 0], v[:, 1]])
    key = lambda a: sorted(map(tuple, np.round(a, 9)))
    assert key(mirrored) == key(v)


def test_chin_shift_translates_lowest_vertex():
    lm = crop_landmarks()
    a = build_face_polygon(lm, 0.0).vertices[:, 1].max()
    b = build_face_polygon(lm, 10.0).vertices[:, 1].max()
    assert b - a == pytest.approx(10.0, abs=1e-12)


def test_profile_view_polygon_valid():
    lm = crop_landmarks()
    prof = lm.replace(left_ear=(60.0, 140.0), right_ear=(60.5, 140.0))
    poly = build_face_polygon(prof, 12.0)
    assert len(poly.vertices) >= 3 and abs(polygon_area(poly.vertices)) > 100


def test_collinear_polygon_errors():
    pts = {n: (10.0 * i, 10.0 * i) for i, n in enumerate(
        ["left_ear", "right_ear", "nose_bridge_mid", "nose_tip", "chin_left", "chin_center", "chin_right"])}
    with pytest.raises(ValidationError, match="degenerate_polygon"):
        build_face_polygon(LandmarkSet(pts, "crop"), 0.0)


def test_convex_hull_vs_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(20):
        pts = rng.random((15, 2)) * 100
        hull = convex_hull(pts)
        # Every input point lies on the inner side of every hull edge.
        for a, b in zip(hull, np.roll(hull, -1, axis=0)):
            cr = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
            assert np.all(cr >= -1e-9)
        # Hull vertices are input points.
        assert all(any(np.allclose(h, p) for p in pts) for h in hull)


def test_feathered_sigma_zero_is_binary():
    sq = PolyMask([[5, 5], [15, 5], [15, 15], [5, 15]])
    m = rasterize_feathered(sq, 20, 20, 0.0)
    np.testing.assert_array_equal(m, rasterize(sq, 20, 20))
    assert m[10, 10] == 1 and m[0, 0] == 0 and set(np.unique(m)) == {0.0, 1.0}


def test_feathered_center_of_large_polygon():
    big = PolyMask([[10, 10], [90, 10], [90, 90], [10, 90]])
    for s in (1.0, 3.0, 5.0):
        assert abs(rasterize_feathered(big, 100, 100, s)[50, 50] - 1.0) < 1e-6


def test_feathered_edge_matches_gaussian_cdf():
    # Left half-plane fill with its edge at x = 49.5 (between pixel centres).
    half = PolyMask([[-100, -100], [49.5, -100], [49.5, 200], [-100, 200]])
    m = rasterize_feathered(half, 100, 100, 2.0)
    x = np.arange(100) - 49.5
    np.testing.assert_allclose(m[50], ndtr(-x / 2.0), atol=1e-3)
    assert np.all(np.diff(m[50]) <= 0)


def test_feathered_exact_zero_far_outside():
    sq = PolyMask([[40, 40], [60, 40], [60, 60], [40, 60]])
    m = rasterize_feathered(sq, 100, 100, 3.0)
    assert np.all(m[:, :27] == 0.0) and np.all(m[:, 74:] == 0.0)
    assert m.min() >= 0 and m.max() <= 1


def test_default_rect_contains_fixture_mouth(track100):
    from lipdub.geometry import canonicalize_crop

    m = RectMask.default()
    for f in range(0, 100, 7):
        res = canonicalize_crop(track100.frames[f], track100.landmarks[f])
        assert m.contains(res.landmarks.array(MOUTH_JAW_LANDMARKS), 256, 256).all()
