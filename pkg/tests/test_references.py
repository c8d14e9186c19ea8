import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipdub.core import AffineTransform
from lipdub.errors import MissingLandmarkError, ValidationError
from lipdub.fixture import pose_sweep_landmarks
from lipdub.references import (
    RefSelection,
    frame_features,
    kmeans,
    mean_pairwise_distance,
    select_references,
    select_references_baseline,
    select_references_kmeans,
)

from conftest import crop_landmarks
from oracles import exhaustive_kmeans_wcss


def test_frame_features_shape_and_roll():
    lm = crop_landmarks()
    f = frame_features(lm)
    assert f.shape == (27,)
    np.testing.assert_array_equal(f, frame_features(crop_landmarks()))
    c = AffineTransform.from_parts(np.eye(2), (128.0, 128.0))
    rot = c @ AffineTransform.similarity(1.0, math.radians(10)) @ AffineTransform.from_parts(np.eye(2), (-128.0, -128.0))
    g = frame_features(lm.transformed(rot))
    assert abs((g[-1] - f[-1]) - math.pi / 18) < 1e-6


def test_frame_features_missing():
    lm = crop_landmarks()
    pts = dict(lm.points)
    del pts["jaw_bottom"]
    with pytest.raises(MissingLandmarkError):
        frame_features(type(lm)(pts, "crop"))


def test_kmeans_matches_exhaustive_optimum():
    rng = np.random.default_rng(0)
    for i in range(50):
        n, k, d = int(rng.integers(4, 13)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.normal(size=(n, d))
        assert kmeans(x, k, seed=i).wcss == pytest.approx(exhaustive_kmeans_wcss(x, k), rel=1e-9, abs=1e-12)


def test_kmeans_deterministic():
    x = np.random.default_rng(1).normal(size=(40, 3))
    a, b = kmeans(x, 4, seed=5), kmeans(x, 4, seed=5)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.wcss == b.wcss


def test_kmeans_not_worse_than_single_restarts():
    x = np.random.default_rng(2).normal(size=(60, 2))
    best = kmeans(x, 5, seed=0).wcss
    worst_single = max(kmeans(x, 5, seed=s, n_init=1).wcss for s in range(10))
    assert best <= worst_single


def test_kmeans_two_blobs_one_each():
    rng = np.random.default_rng(3)
    a = rng.normal(0, 0.1, (6, 2))
    b = rng.normal(5, 0.1, (6, 2))
    sel = select_references_kmeans(np.vstack([a, b]), k=2, seed=0)
    assert len(sel) == 2
    assert sum(i < 6 for i in sel) == 1


def test_kmeans_selection_on_200_frames():
    feats = [frame_features(lm) for lm in pose_sweep_landmarks(200)]
    sel = select_references_kmeans(feats, k=10, seed=0, exclude=37)
    assert len(set(sel.indices)) == 10 and 37 not in sel.indices
    assert sel.excluded_target == 37


def test_small_track_returns_all():
    feats = np.random.default_rng(0).random((6, 3))
    assert select_references_kmeans(feats, k=10, exclude=2).indices == (0, 1, 3, 4, 5)
    with pytest.raises(ValidationError):
        select_references_kmeans(feats[:1], k=3, exclude=0)


def test_baselines():
    assert select_references_baseline(5, 1, "first", exclude=0).indices == (1,)
    u = select_references_baseline(100, 10, "uniform", exclude=50).indices
    assert len(u) == 10 and 50 not in u
    gaps = np.diff(u)
    assert gaps.min() >= 9 and gaps.max() <= 11
    r1 = select_references_baseline(100, 10, "random", exclude=3, seed=9)
    r2 = select_references_baseline(100, 10, "random", exclude=3, seed=9)
    assert r1 == r2 and 3 not in r1.indices
    # k larger than the candidates clamps to n_frames - 1.
    assert len(select_references_baseline(5, 10, "first", exclude=4)) == 4


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 60), st.integers(1, 12), st.sampled_from(["first", "uniform", "random", "kmeans"]), st.data())
def test_no_strategy_returns_target(n, k, strategy, data):
    target = data.draw(st.integers(0, n - 1))
    lms = pose_sweep_landmarks(n, seed=1)
    sel = select_references(lms, k, strategy, seed=0, exclude=target)
    assert target not in sel.indices
    assert list(sel.indices) == sorted(set(sel.indices))
    assert len(sel) <= k


def test_refselection_invariants():
    with pytest.raises(ValidationError):
        RefSelection((3, 1), "first", frozenset(), 5)
    with pytest.raises(ValidationError):
        RefSelection((1, 2), "first", frozenset([2]), 5)


def test_kmeans_more_diverse_than_first_k():
    lms = pose_sweep_landmarks(200)
    feats = np.array([frame_features(lm) for lm in lms])
    km = select_references(lms, 10, "kmeans", seed=0)
    first = select_references(lms, 10, "first")
    assert mean_pairwise_distance(feats[list(km.indices)]) >= mean_pairwise_distance(feats[list(first.indices)])
