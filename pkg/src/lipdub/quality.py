"""Clip-quality filters and track selection."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import AudioClip, LandmarkSet, frame_sample_bounds, to_gray
from .errors import ValidationError

MIN_EYE_DISTANCE = 80.0
MIN_FPS = 23.0
MAX_FPS = 30.0
SYNC_THRESHOLD = 0.8
MIN_SYNC_FRAMES = 15

REASONS = ("eye_distance", "fps_too_low", "fps_out_of_range", "blur", "sync_score")


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: str | None = None

    def __post_init__(self):
        if self.accepted and self.reason is not None:
            raise ValidationError("an accept verdict carries no reason")
        if not self.accepted and self.reason not in REASONS:
            raise ValidationError(f"reject needs one reason code from {REASONS}, got {self.reason!r}")

    def __bool__(self):
        return self.accepted

    def __str__(self):
        return "accept" if self.accepted else f"reject({self.reason})"


ACCEPT = Verdict(True)


def reject(reason: str) -> Verdict:
    return Verdict(False, reason)


def _laplacian(img) -> np.ndarray:
    g = np.asarray(img, dtype=np.float64)
    if g.ndim == 3:
        if g.shape[2] != 1:
            raise ValidationError("variance_of_laplacian expects a single-channel image")
        g = g[..., 0]
    if g.ndim != 2 or min(g.shape) < 3:
        raise ValidationError(f"image must be at least 3x3, got shape {g.shape}")
    return g[:-2, 1:-1] + g[2:, 1:-1] + g[1:-1, :-2] + g[1:-1, 2:] - 4.0 * g[1:-1, 1:-1]


def variance_of_laplacian(img) -> float:
    """Variance of the 4-neighbour Laplacian over interior pixels (VLap)."""
    return float(np.var(_laplacian(img)))


def stddev_of_laplacian(img) -> float:
    return math.sqrt(variance_of_laplacian(img))


def eye_distance(lm: LandmarkSet) -> float:
    (x1, y1), (x2, y2) = lm["left_eye"], lm["right_eye"]
    return math.hypot(x2 - x1, y2 - y1)


def filter_eye_distance(lm: LandmarkSet, min_distance: float = MIN_EYE_DISTANCE) -> Verdict:
    return reject("eye_distance") if eye_distance(lm) < min_distance else ACCEPT


def normalize_fps(frames: Sequence, fps: float):
    """Return ``(frames, fps)`` with fps brought into [23, 30], or a reject verdict.

    Rates above 30 drop every second frame once; if that does not land in range
    the clip is rejected.
    """
    if fps <= 0:
        raise ValidationError(f"fps must be positive, got {fps}")
    if fps < MIN_FPS:
        return reject("fps_too_low")
    if fps <= MAX_FPS:
        return frames, fps
    halved = fps / 2.0
    if not (MIN_FPS <= halved <= MAX_FPS):
        return reject("fps_out_of_range")
    return frames[::2], halved


def mouth_opening(lm: LandmarkSet) -> float:
    """Inner-lip gap normalized by eye distance."""
    gap = lm["lip_bottom_inner"][1] - lm["lip_top_inner"][1]
    return gap / eye_distance(lm)


def audio_envelope(audio: AudioClip, n_frames: int, fps: float) -> np.ndarray:
    """Per-video-frame RMS of ``audio``."""
    out = np.empty(n_frames)
    for i in range(n_frames):
        a, b = frame_sample_bounds(i, fps, audio.sample_rate)
        seg = audio.samples[a:b]
        out[i] = math.sqrt(float(np.mean(seg * seg))) if len(seg) else 0.0
    return out


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    scale_a, scale_b = np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0)
    if na == 0 or nb == 0 or na <= 1e-12 * scale_a * len(a) or nb <= 1e-12 * scale_b * len(b):
        return None
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def sync_score(frames_landmarks: Sequence[LandmarkSet], audio: AudioClip, fps: float) -> float:
    """Stand-in active-speaker score: correlation of mouth opening with the audio envelope, mapped to [0, 1]."""
    n = len(frames_landmarks)
    if n < MIN_SYNC_FRAMES:
        raise ValidationError(f"sync_score needs at least {MIN_SYNC_FRAMES} frames, got {n}")
    if frame_sample_bounds(n - 1, fps, audio.sample_rate)[1] > len(audio):
        raise ValidationError("audio does not cover the frame span")
    mouth = np.array([mouth_opening(lm) for lm in frames_landmarks])
    env = audio_envelope(audio, n, fps)
    if np.ptp(mouth) == 0 or np.ptp(env) == 0:
        return 0.5
    r = _pearson(mouth, env)
    return 0.5 if r is None else (r + 1.0) / 2.0


def select_track(tracks) -> int:
    """Index of the track with the highest sync score; the lowest index wins ties.

    ``tracks`` holds ``(landmark_sequence, score)`` pairs or bare scores.
    """
    scores = [t[1] if isinstance(t, tuple) else t for t in tracks]
    if not scores:
        raise ValidationError("select_track needs at least one track")
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return best


@dataclass(frozen=True)
class TrackQualityReport:
    vlap: float
    min_eye_distance: float
    fps_in: float
    fps_out: float
    sync_score: float | None
    verdict: Verdict

    def to_record(self) -> dict:
        d = asdict(self)
        d["verdict"] = "accept" if self.verdict.accepted else "reject"
        d["reason"] = self.verdict.reason
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def assess_track(
    frames: Sequence,
    landmarks: Sequence[LandmarkSet],
    audio: AudioClip,
    fps: float,
    *,
    min_eye_distance: float = MIN_EYE_DISTANCE,
    min_vlap: float = 0.0,
    sync_threshold: float = SYNC_THRESHOLD,
    require_sync: bool = True,
) -> TrackQualityReport:
    """Run every filter on one track; the first failing filter names the reject reason.

    ``frames`` are the images VLap is measured on (median over frames).
    """
    min_eye = min(eye_distance(lm) for lm in landmarks)
    vlap = float(np.median([variance_of_laplacian(to_gray(f)) for f in frames]))
    verdict = ACCEPT
    fps_out = fps
    normalized = normalize_fps(list(range(len(landmarks))), fps)
    if isinstance(normalized, Verdict):
        verdict = normalized
    else:
        kept, fps_out = normalized
        landmarks = [landmarks[i] for i in kept]
    if verdict and min_eye < min_eye_distance:
        verdict = reject("eye_distance")
    if verdict and vlap < min_vlap:
        verdict = reject("blur")
    score = None
    if len(landmarks) >= MIN_SYNC_FRAMES:
        score = sync_score(landmarks, audio, fps_out)
    if verdict and require_sync and (score is None or score < sync_threshold):
        verdict = reject("sync_score")
    return TrackQualityReport(vlap, min_eye, fps, fps_out, score, verdict)
