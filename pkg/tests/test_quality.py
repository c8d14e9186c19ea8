import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipdub.core import AudioClip, LandmarkSet
from lipdub.errors import MissingLandmarkError, ValidationError
from lipdub.quality import (
    Verdict,
    assess_track,
    filter_eye_distance,
    normalize_fps,
    select_track,
    stddev_of_laplacian,
    sync_score,
    variance_of_laplacian,
)


def brute_vlap(g):
    vals = []
    h, w = g.shape
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            vals.append(g[y - 1, x] + g[y + 1, x] + g[y, x - 1] + g[y, x + 1] - 4 * g[y, x])
    m = sum(vals) / len(vals)
    return sum((v - m) ** 2 for v in vals) / len(vals)


def test_vlap_constant_and_ramp():
    assert variance_of_laplacian(np.full((10, 12), 0.3)) == 0.0
    ys, xs = np.mgrid[0:16, 0:16]
    assert variance_of_laplacian((0.01 * xs + 0.02 * ys)) < 1e-12


def test_vlap_checkerboard_oracle():
    board = (np.indices((8, 8)).sum(axis=0) % 2).astype(float)
    assert variance_of_laplacian(board) == pytest.approx(brute_vlap(board), abs=1e-12)
    assert stddev_of_laplacian(board) == pytest.approx(math.sqrt(brute_vlap(board)))


def test_vlap_too_small():
    with pytest.raises(ValidationError):
        variance_of_laplacian(np.zeros((2, 5)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(-0.5, 0.5))
def test_vlap_offset_invariant(seed, c):
    g = np.random.default_rng(seed).random((9, 11))
    assert variance_of_laplacian(g + c) == pytest.approx(variance_of_laplacian(g), abs=1e-10)


def _eyes(d):
    return LandmarkSet({"left_eye": (10.0, 50.0), "right_eye": (10.0 + d, 50.0)}, "frame")


def test_eye_distance_threshold():
    assert filter_eye_distance(_eyes(79.9)) == Verdict(False, "eye_distance")
    assert filter_eye_distance(_eyes(80.0)).accepted
    assert filter_eye_distance(_eyes(200.0)).accepted
    with pytest.raises(MissingLandmarkError):
        filter_eye_distance(LandmarkSet({"left_eye": (0.0, 0.0)}, "frame"))


def test_normalize_fps():
    frames, fps = normalize_fps(list(range(100)), 60.0)
    assert (len(frames), fps) == (50, 30.0)
    assert frames == list(range(0, 100, 2))
    assert normalize_fps([1, 2, 3], 25.0) == ([1, 2, 3], 25.0)
    assert normalize_fps([1], 22.0) == Verdict(False, "fps_too_low")
    assert normalize_fps([1], 100.0).reason == "fps_out_of_range"


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 300), st.floats(23.0, 60.0))
def test_normalize_fps_range_and_count(n, fps):
    out = normalize_fps(list(range(n)), fps)
    if isinstance(out, Verdict):
        assert fps > 30.0
        return
    frames, f = out
    assert 23.0 <= f <= 30.0
    assert len(frames) == (n if fps <= 30 else math.ceil(n / 2))


def _sync_fixture(n=60, fps=25.0, sign=1.0, gain=0.5, lm_scale=1.0):
    env = 0.5 + 0.4 * np.sin(np.arange(n) / 3.0)
    t = np.arange(int(round(n * 16000 / fps))) / 16000
    amp = np.repeat(env, int(16000 / fps))[: len(t)]
    audio = AudioClip(gain * amp * np.sin(2 * np.pi * 220 * t), 16000)
    lms = []
    for e in env:
        gap = 20 * (e if sign > 0 else 1.0 - e)
        lms.append(LandmarkSet({
            "left_eye": (0.0, 0.0), "right_eye": (90.0 * lm_scale, 0.0),
            "lip_top_inner": (45.0 * lm_scale, 100.0 * lm_scale),
            "lip_bottom_inner": (45.0 * lm_scale, (100.0 + gap) * lm_scale),
        }, "frame"))
    return lms, audio, fps


def test_sync_score_correlated_and_anticorrelated():
    assert sync_score(*_sync_fixture()) > 0.9
    assert sync_score(*_sync_fixture(sign=-1.0)) < 0.1


def test_sync_score_constant_mouth():
    lms, audio, fps = _sync_fixture()
    assert sync_score([lms[0]] * len(lms), audio, fps) == 0.5


def test_sync_score_invariances():
    base = sync_score(*_sync_fixture())
    assert sync_score(*_sync_fixture(gain=0.1)) == pytest.approx(base, abs=1e-9)
    assert sync_score(*_sync_fixture(lm_scale=2.5)) == pytest.approx(base, abs=1e-9)


def test_sync_score_needs_frames():
    lms, audio, fps = _sync_fixture(n=10)
    with pytest.raises(ValidationError):
        sync_score(lms, audio, fps)


def test_select_track():
    assert select_track([0.2, 0.9, 0.4]) == 1
    assert select_track([0.7, 0.7]) == 0
    assert select_track([(["lm"], 0.3)]) == 0
    with pytest.raises(ValidationError):
        select_track([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=10))
def test_select_track_monotone_invariant(scores):
    assert select_track(scores) == select_track([math.exp(3 * s) + 1 for s in scores])


def test_fixture_passes_filters(track100):
    rep = assess_track(track100.frames[:30], track100.landmarks, track100.audio, track100.fps)
    assert rep.verdict.accepted, rep
    assert rep.sync_score > 0.9
    assert rep.min_eye_distance >= 80


def test_assess_reports_single_reason(track100):
    rep = assess_track(track100.frames[:5], track100.landmarks, track100.audio, track100.fps, min_eye_distance=120)
    assert rep.verdict == Verdict(False, "eye_distance")
    assert rep.to_record()["reason"] == "eye_distance"
    rep = assess_track(track100.frames[:5], track100.landmarks, track100.audio, track100.fps, min_vlap=1.0)
    assert rep.verdict.reason == "blur"
