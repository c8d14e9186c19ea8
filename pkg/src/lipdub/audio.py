"""Log-mel / MFCC extraction at a 100 Hz feature rate and per-video-frame windows."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .core import SAMPLE_RATE, AudioClip
from .errors import BundleError, ValidationError

FEATURE_RATE = 100
WIN_SECONDS = 0.025
N_MELS = 80
FMIN = 125.0
FMAX = 7600.0
EPS = 1e-10
WINDOW_FRAMES = 24

KINDS = ("logmel", "mfcc")


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray  # (T, D)
    kind: str = "logmel"
    rate: float = FEATURE_RATE

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValidationError(f"feature matrix must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("feature matrix has non-finite values")
        if self.kind not in KINDS:
            raise ValidationError(f"unknown feature kind {self.kind!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    def __len__(self):
        return len(self.values)

    def silence_row(self) -> np.ndarray:
        """Feature row of digital silence on the same scale as the real rows."""
        if self.kind == "mfcc":
            return dct(np.full(N_MELS, math.log(EPS)), type=2, norm="ortho")[: self.values.shape[1]]
        return np.full(self.values.shape[1], math.log(EPS))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(n_mels: int = N_MELS, fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """``n_mels + 2`` frequencies: band ``i`` rises from edge ``i`` to peak ``i+1`` and falls to ``i+2``."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_filterbank(n_fft: int, sample_rate: int = SAMPLE_RATE, n_mels: int = N_MELS, fmin=FMIN, fmax=FMAX) -> np.ndarray:
    """Triangular (HTK-mel spaced) weights of shape ``(n_mels, n_fft // 2 + 1)``."""
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_band_edges(n_mels, fmin, fmax)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def _stft_magnitude(samples: np.ndarray, win: int, hop: int, n_fft: int) -> np.ndarray:
    n_frames = (len(samples) - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    window = np.hanning(win + 1)[:-1]  # periodic Hann
    return np.abs(np.fft.rfft(samples[idx] * window, n=n_fft, axis=1))


def _check_audio(audio: AudioClip) -> tuple[int, int]:
    if audio.sample_rate != SAMPLE_RATE:
        raise ValidationError(f"audio must be {SAMPLE_RATE} Hz, got {audio.sample_rate}")
    win = int(round(WIN_SECONDS * audio.sample_rate))
    hop = audio.sample_rate // FEATURE_RATE
    if len(audio) < win:
        raise ValidationError(f"audio shorter than one {win}-sample analysis window")
    return win, hop


def log_mel(audio: AudioClip) -> FeatureMatrix:
    """Natural-log mel magnitude spectrogram: 25 ms Hann window, 10 ms hop, 80 bands over 125-7600 Hz.

    Magnitude (not power) keeps the gain relation simple: scaling the audio by
    ``g`` adds ``log g`` to every cell above the floor.
    """
    win, hop = _check_audio(audio)
    n_fft = 1 << (win - 1).bit_length()
    mag = _stft_magnitude(audio.samples, win, hop, n_fft)
    mel = mag @ mel_filterbank(n_fft, audio.sample_rate).T
    return FeatureMatrix(np.log(np.maximum(mel, EPS)), "logmel", FEATURE_RATE)


def mfcc(audio: AudioClip, n_coeffs: int = 13) -> FeatureMatrix:
    if not (1 <= n_coeffs <= N_MELS):
        raise ValidationError(f"n_coeffs must lie in [1, {N_MELS}], got {n_coeffs}")
    lm = log_mel(audio)
    return FeatureMatrix(dct(lm.values, type=2, norm="ortho", axis=1)[:, :n_coeffs], "mfcc", FEATURE_RATE)


def extract(audio: AudioClip, kind: str = "logmel", n_coeffs: int = 13) -> FeatureMatrix:
    if kind == "logmel":
        return log_mel(audio)
    if kind == "mfcc":
        return mfcc(audio, n_coeffs)
    raise ValidationError(f"unknown feature kind {kind!r}")


def window_center(frame_idx: int, fps: float, rate: float = FEATURE_RATE) -> int:
    return int(math.floor(frame_idx / fps * rate + 0.5))


def window_for_frame(fm: FeatureMatrix, frame_idx: int, fps: float, width: int = WINDOW_FRAMES) -> np.ndarray:
    """``width`` feature rows centred on the video frame; rows outside the matrix are silence."""
    if width % 2:
        raise ValidationError(f"window width must be even, got {width}")
    if not (23.0 <= fps <= 30.0):
        raise ValidationError(f"fps {fps} outside [23, 30]")
    c = window_center(frame_idx, fps, fm.rate)
    rows = np.arange(c - width // 2, c + width // 2)
    out = np.tile(fm.silence_row(), (width, 1))
    valid = (rows >= 0) & (rows < len(fm))
    out[valid] = fm.values[rows[valid]]
    return out


_MAGIC = b"LDFM"
_HEADER = struct.Struct("<4sHIIBd")  # magic, version, T, D, kind, rate


def save_features(fm: FeatureMatrix, path) -> None:
    """Flat little-endian float64 rows after a fixed header (magic, version, T, D, kind, rate)."""
    t, d = fm.shape
    header = _HEADER.pack(_MAGIC, 1, t, d, KINDS.index(fm.kind), float(fm.rate))
    Path(path).write_bytes(header + fm.values.astype("<f8").tobytes())


def load_features(path) -> FeatureMatrix:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise BundleError(f"{path}: truncated feature file")
    magic, version, t, d, kind, rate = _HEADER.unpack_from(data)
    if magic != _MAGIC or version != 1 or kind >= len(KINDS):
        raise BundleError(f"{path}: not a version-1 feature file")
    body = data[_HEADER.size :]
    if len(body) != 8 * t * d:
        raise BundleError(f"{path}: expected {t}x{d} values, found {len(body) // 8}")
    return FeatureMatrix(np.frombuffer(body, dtype="<f8").reshape(t, d), KINDS[kind], rate)
