import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipdub.core import AffineTransform, LandmarkSet
from lipdub.errors import DegenerateConfigurationError, MissingLandmarkError, ValidationError
from lipdub.geometry import (
    FACE_TEMPLATE,
    canonicalize_crop,
    estimate_affine,
    gaussian_taps,
    invert_affine,
    orthogonalize_procrustes,
    smooth_landmarks,
    warp_bicubic,
)
from lipdub.metrics import psnr

TEMPLATE = np.array(list(FACE_TEMPLATE.values()))


def residual(t, src, dst):
    return float(np.sum((t.apply(src) - dst) ** 2))


def test_estimate_affine_identity():
    t = estimate_affine(TEMPLATE, TEMPLATE)
    np.testing.assert_allclose(t.matrix, np.eye(2, 3), atol=1e-9)


def test_estimate_affine_halving_matches_normal_equations():
    src = 2.0 * TEMPLATE
    t = estimate_affine(src, TEMPLATE)
    # Normal equations solved independently.
    x = np.hstack([src, np.ones((len(src), 1))])
    oracle = np.linalg.solve(x.T @ x, x.T @ TEMPLATE).T
    np.testing.assert_allclose(t.matrix, oracle, atol=1e-9)
    np.testing.assert_allclose(t.linear, 0.5 * np.eye(2), atol=1e-9)
    np.testing.assert_allclose(t.translation, 0.0, atol=1e-9)


def test_estimate_affine_beats_similarity_grid():
    rng = np.random.default_rng(1)
    true = AffineTransform.similarity(0.8, 0.2, (30.0, -12.0))
    src = invert_affine(true).apply(TEMPLATE) + rng.normal(0, 0.5, TEMPLATE.shape)
    best = math.inf
    for s in np.arange(0.70, 0.90, 0.01):
        for th in np.arange(0.10, 0.30, 0.01):
            lin = AffineTransform.similarity(s, th).linear
            tr = (TEMPLATE - src @ lin.T).mean(axis=0)
            best = min(best, residual(AffineTransform.from_parts(lin, tr), src, TEMPLATE))
    assert residual(estimate_affine(src, TEMPLATE), src, TEMPLATE) <= best + 1e-9


def test_estimate_affine_degenerate():
    with pytest.raises(DegenerateConfigurationError):
        estimate_affine(TEMPLATE[:2], TEMPLATE[:2])
    line = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [5.0, 5.0]])
    with pytest.raises(DegenerateConfigurationError):
        estimate_affine(line, TEMPLATE)


def test_procrustes_fixed_points():
    t = AffineTransform.similarity(1.7, 0.4, (3.0, 4.0))
    np.testing.assert_allclose(orthogonalize_procrustes(t).matrix, t.matrix, atol=1e-9)
    flip = AffineTransform.from_parts(-np.eye(2), (1.0, 2.0))
    np.testing.assert_allclose(orthogonalize_procrustes(flip).matrix, flip.matrix, atol=1e-9)


def test_procrustes_shear_matches_grid_oracle():
    shear = np.array([[1.0, 0.3], [0.0, 1.0]])
    got = orthogonalize_procrustes(AffineTransform.from_parts(shear, (7.0, 8.0)))
    np.testing.assert_array_equal(got.translation, [7.0, 8.0])
    best, arg = math.inf, None
    for s in np.arange(0.9, 1.2, 0.001):
        for th in np.arange(-0.3, 0.3, 0.001):
            err = np.linalg.norm(AffineTransform.similarity(s, th).linear - shear)
            if err < best:
                best, arg = err, (s, th)
    s = math.sqrt(abs(got.det))
    th = math.atan2(got.linear[1, 0], got.linear[0, 0])
    assert abs(s - arg[0]) <= 1e-3 and abs(th - arg[1]) <= 1e-3
    # The grid can only be worse than the exact Frobenius minimizer of the two singular values.
    assert np.linalg.norm(got.linear - shear) <= best + 1e-12


def test_procrustes_singular():
    with pytest.raises(DegenerateConfigurationError):
        orthogonalize_procrustes(AffineTransform.from_parts([[1.0, 1.0], [1.0, 1.0 + 1e-15]]))


affines = st.tuples(*[st.floats(-3, 3) for _ in range(4)], st.floats(-50, 50), st.floats(-50, 50)).filter(
    lambda v: abs(v[0] * v[3] - v[1] * v[2]) > 1e-2
)


@settings(max_examples=200, deadline=None)
@given(affines)
def test_procrustes_orthogonal_and_idempotent(v):
    a = AffineTransform([[v[0], v[1], v[4]], [v[2], v[3], v[5]]])
    p = orthogonalize_procrustes(a)
    lin = p.linear
    s2 = np.linalg.svd(lin, compute_uv=False).mean() ** 2
    np.testing.assert_allclose(lin.T @ lin, s2 * np.eye(2), atol=1e-9 * max(1.0, s2))
    assert np.linalg.det(lin) > 0 or np.linalg.det(a.linear) < 0
    np.testing.assert_allclose(orthogonalize_procrustes(p).matrix, p.matrix, atol=1e-9 * max(1.0, s2))


@settings(max_examples=200, deadline=None)
@given(affines)
def test_invert_composes_to_identity(v):
    a = AffineTransform([[v[0], v[1], v[4]], [v[2], v[3], v[5]]])
    scale = max(1.0, np.abs(a.matrix).max()) * max(1.0, np.abs(invert_affine(a).matrix).max())
    np.testing.assert_allclose((a @ invert_affine(a)).matrix, np.eye(2, 3), atol=1e-9 * scale)


def test_invert_examples():
    assert invert_affine(AffineTransform.identity()) == AffineTransform.identity()
    t = AffineTransform.from_parts(2 * np.eye(2), (10.0, 0.0))
    np.testing.assert_allclose(invert_affine(t).matrix, [[0.5, 0, -5.0], [0, 0.5, 0.0]], atol=1e-12)


def test_warp_identity_exact():
    img = np.random.default_rng(0).random((20, 17, 3))
    np.testing.assert_array_equal(warp_bicubic(img, AffineTransform.identity(), 20, 17), img)


def test_warp_integer_translation_exact():
    img = np.random.default_rng(1).random((30, 40))
    out = warp_bicubic(img, AffineTransform.from_parts(np.eye(2), (5.0, 3.0)), 30, 40)
    np.testing.assert_array_equal(out[3:, 5:], img[:-3, :-5])


def test_warp_rotation_round_trip():
    n = 128
    ys, xs = np.mgrid[0:n, 0:n]
    r = np.hypot(xs - n / 2, ys - n / 2)
    img = 0.5 + 0.4 * np.cos(r / 9.0)
    c = AffineTransform.from_parts(np.eye(2), (n / 2, n / 2))
    rot = c @ AffineTransform.similarity(1.0, math.radians(30)) @ invert_affine(c)
    back = warp_bicubic(warp_bicubic(img, rot, n, n), invert_affine(rot), n, n)
    inner = slice(32, 96)
    assert psnr(back[inner, inner], img[inner, inner]) >= 40.0


def test_gaussian_taps_radius():
    assert len(gaussian_taps(1.0)) == 7
    assert len(gaussian_taps(1.5)) == 11


def _track(values):
    return [LandmarkSet({"a": (float(v), 2.0 * float(v))}, "frame") for v in values]


def test_smoothing_constant_and_ramp():
    out = smooth_landmarks(_track([3.0] * 12), 1.0)
    assert all(abs(lm["a"][0] - 3.0) < 1e-9 for lm in out)
    ramp = smooth_landmarks(_track(np.arange(20.0)), 1.0)
    for i in range(3, 17):
        assert abs(ramp[i]["a"][0] - i) < 1e-6
        assert abs(ramp[i]["a"][1] - 2 * i) < 1e-6


def test_smoothing_impulse_matches_kernel():
    v = np.zeros(21)
    v[10] = 1.0
    out = np.array([lm["a"][0] for lm in smooth_landmarks(_track(v), 1.0)])
    k = np.exp(-0.5 * np.arange(-3, 4) ** 2) / math.sqrt(2 * math.pi)
    np.testing.assert_allclose(out[7:14], k[::-1] / k.sum(), atol=1e-12)
    assert abs(out[10] - 0.3989422804014327 / k.sum()) < 1e-12
    np.testing.assert_array_equal(out[:7], 0.0)


def test_smoothing_renormalizes_at_boundary():
    v = np.zeros(10)
    v[0] = 1.0
    out = np.array([lm["a"][0] for lm in smooth_landmarks(_track(v), 1.0)])
    k = np.exp(-0.5 * np.arange(0, 4) ** 2)
    # Frame 0 sees taps 0..3 only; frame 1 sees offsets -1..3.
    assert abs(out[0] - k[0] / k.sum()) < 1e-12
    assert abs(out[1] - k[1] / (k.sum() + k[1])) < 1e-12


def test_smoothing_errors():
    with pytest.raises(ValidationError):
        smooth_landmarks([], 1.0)
    with pytest.raises(ValidationError):
        smooth_landmarks(_track([1, 2, 3]), 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=40, max_size=80))
def test_smoothing_preserves_mean_of_periodic_interior(vals):
    # Pad with a constant border so boundary renormalization does not move mass.
    c = vals[0]
    seq = [c] * 5 + vals + [c] * 5
    v = np.array(seq)
    out = np.array([lm["a"][0] for lm in smooth_landmarks(_track(v), 1.0)])
    assert abs(out.mean() - v.mean()) < 1e-6 * max(1.0, np.abs(v).max()) * 10


def _face(rotation=0.0, shift=(0.0, 0.0)):
    pts = dict(FACE_TEMPLATE)
    pts.update({"chin_center": (128.0, 230.0), "chin_left": (100.0, 220.0), "nose_tip": (128.0, 175.0)})
    lm = LandmarkSet(pts, "crop")
    c = AffineTransform.from_parts(np.eye(2), (128.0 + shift[0], 128.0 + shift[1]))
    pose = c @ AffineTransform.similarity(1.0, rotation) @ AffineTransform.from_parts(np.eye(2), (-128.0, -128.0))
    return LandmarkSet({k: tuple(pose.apply(v)) for k, v in lm.points.items()}, "frame")


def test_canonicalize_template_face_identity():
    img = np.random.default_rng(2).random((256, 256, 3))
    crop, t, lm = canonicalize_crop(img, _face())
    assert np.abs(t.translation).max() < 1e-6
    np.testing.assert_allclose(t.linear, np.eye(2), atol=1e-9)
    assert lm.space == "crop"


def test_canonicalize_ignores_chin():
    img = np.random.default_rng(2).random((256, 256, 3))
    lm = _face(0.1)
    base = canonicalize_crop(img, lm).transform
    for dy in (-20.0, 20.0):
        moved = lm.replace(chin_center=(lm["chin_center"][0], lm["chin_center"][1] + dy))
        assert canonicalize_crop(img, moved).transform == base


def test_canonicalize_rotated_face_eyes_on_template():
    img = np.zeros((300, 300, 3))
    lm = _face(math.radians(15), (20.0, 10.0))
    res = canonicalize_crop(img, lm)
    assert res.transform.is_procrustes()
    for name in ("left_eye", "right_eye"):
        assert np.hypot(*(np.array(res.landmarks[name]) - FACE_TEMPLATE[name])) < 0.5


def test_canonicalize_missing_landmark_named():
    pts = dict(_face().points)
    del pts["nose_bridge_mid"]
    with pytest.raises(MissingLandmarkError, match="nose_bridge_mid"):
        canonicalize_crop(np.zeros((64, 64)), LandmarkSet(pts, "frame"))
