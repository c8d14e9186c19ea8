import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.fft import dct

from lipdub.audio import (
    EPS,
    FeatureMatrix,
    load_features,
    log_mel,
    mel_band_edges,
    mel_filterbank,
    mfcc,
    save_features,
    window_for_frame,
)
from lipdub.core import AudioClip
from lipdub.errors import BundleError, ValidationError


def tone(freq, seconds=1.0, amp=0.5):
    t = np.arange(int(16000 * seconds)) / 16000
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), 16000)


def test_one_second_shape():
    fm = log_mel(tone(440))
    assert fm.shape == (98, 80) and fm.rate == 100


def test_silence_is_floor():
    fm = log_mel(AudioClip(np.zeros(16000), 16000))
    np.testing.assert_array_equal(fm.values, math.log(EPS))


def test_too_short_and_wrong_rate():
    with pytest.raises(ValidationError):
        log_mel(AudioClip(np.zeros(399), 16000))
    with pytest.raises(ValidationError):
        log_mel(AudioClip(np.zeros(44100), 44100))


def test_tone_peaks_in_band_containing_frequency():
    # Oracle: HTK mel formula evaluated directly; the band whose centre is nearest 1 kHz on the mel scale.
    mel = lambda f: 2595.0 * math.log10(1.0 + f / 700.0)
    lo, hi = mel(125.0), mel(7600.0)
    centres = [lo + (hi - lo) * (i + 1) / 81 for i in range(80)]
    expected = min(range(80), key=lambda i: abs(centres[i] - mel(1000.0)))
    fm = log_mel(tone(1000.0))
    assert set(fm.values.argmax(axis=1)) == {expected}


def test_filterbank_triangle_peaks_at_centres():
    edges = mel_band_edges()
    assert edges[0] == pytest.approx(125.0) and edges[-1] == pytest.approx(7600.0)
    fb = mel_filterbank(512)
    assert fb.shape == (80, 257) and fb.min() >= 0 and fb.max() <= 1


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.9))
def test_gain_covariance(g):
    base = tone(300.0, 0.3, amp=1.0)
    a = log_mel(base).values
    b = log_mel(AudioClip(base.samples * g, 16000)).values
    above = a + math.log(g) > math.log(EPS) + 5
    np.testing.assert_allclose((b - a)[above], math.log(g), atol=1e-6)


def test_mfcc_shapes_and_parseval():
    audio = tone(700.0)
    m = mfcc(audio, 13)
    assert m.shape == (98, 13) and m.kind == "mfcc"
    lm = log_mel(audio).values
    full = mfcc(audio, 80).values
    np.testing.assert_allclose(np.linalg.norm(full, axis=1), np.linalg.norm(lm, axis=1), rtol=1e-9)
    with pytest.raises(ValidationError):
        mfcc(audio, 0)


def test_dct_of_constant_row():
    c = dct(np.full(80, -3.0), type=2, norm="ortho")
    assert abs(c[0]) > 0 and np.abs(c[1:]).max() < 1e-12
    # Silence row of an MFCC matrix is the DCT of the floor row.
    fm = FeatureMatrix(np.zeros((3, 13)), "mfcc")
    assert np.abs(fm.silence_row()[1:]).max() < 1e-9


def test_window_middle_and_padding():
    fm = log_mel(tone(440.0, 2.0))
    mid = window_for_frame(fm, 25, 25.0)
    np.testing.assert_array_equal(mid, fm.values[88:112])
    first = window_for_frame(fm, 0, 30.0)
    assert first.shape == (24, 80)
    np.testing.assert_array_equal(first[:12], math.log(EPS))
    np.testing.assert_array_equal(first[12:], fm.values[:12])


def test_adjacent_frames_shift_four_rows():
    fm = FeatureMatrix(np.arange(300.0)[:, None] * np.ones((1, 2)))
    a = window_for_frame(fm, 20, 25.0)
    b = window_for_frame(fm, 21, 25.0)
    assert b[0, 0] - a[0, 0] == 4


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 400), st.floats(23.0, 30.0))
def test_window_always_24_rows(f, fps):
    fm = FeatureMatrix(np.zeros((50, 5)))
    assert window_for_frame(fm, f, fps).shape == (24, 5)


def test_window_rejects_odd_width_and_bad_fps():
    fm = FeatureMatrix(np.zeros((50, 5)))
    with pytest.raises(ValidationError):
        window_for_frame(fm, 0, 25.0, width=23)
    with pytest.raises(ValidationError):
        window_for_frame(fm, 0, 60.0)


def test_feature_file_round_trip(tmp_path):
    fm = mfcc(tone(220.0, 0.5), 20)
    save_features(fm, tmp_path / "f.bin")
    back = load_features(tmp_path / "f.bin")
    assert back.kind == "mfcc" and back.rate == 100
    np.testing.assert_array_equal(back.values, fm.values)
    (tmp_path / "bad.bin").write_bytes(b"LDFM")
    with pytest.raises(BundleError):
        load_features(tmp_path / "bad.bin")
