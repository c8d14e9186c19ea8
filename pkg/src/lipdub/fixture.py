"""Procedurally rendered talking-face tracks with exact landmarks.

The face is a stack of soft-edged ellipses (head, eyes, nose, lips, mouth
cavity). Mouth opening follows a smooth random envelope that also drives the
amplitude of a harmonic audio signal, so mouth motion and audio RMS are
strongly correlated by construction.
"""
from __future__ import annotations

import math

import numpy as np

from .bundle import Track
from .core import CROP_SIZE, SAMPLE_RATE, AffineTransform, AudioClip, LandmarkSet
from .errors import ValidationError

FPS = 25.0
FRAME_SIZE = (384, 384)
EYE_DISTANCE = 90.0

# Face-local coordinates (pixels at unit scale, origin at the eye midpoint, y down).
_STATIC_POINTS = {
    "left_eye": (-45.0, 0.0),
    "right_eye": (45.0, 0.0),
    "eye_midpoint": (0.0, 0.0),
    "nose_bridge_mid": (0.0, 45.0),
    "nose_tip": (0.0, 72.0),
    "left_ear": (-92.0, 30.0),
    "right_ear": (92.0, 30.0),
    "chin_left": (-42.0, 138.0),
    "chin_center": (0.0, 150.0),
    "chin_right": (42.0, 138.0),
    "jaw_left": (-62.0, 112.0),
    "jaw_right": (62.0, 112.0),
}
MOUTH_Y = 108.0
MOUTH_HALF_WIDTH = 30.0
LIP = 6.0


def mouth_points(opening: float, jaw_drop: float = 0.0) -> dict:
    """Local mouth/jaw landmarks for an inner-lip gap of ``opening`` pixels."""
    half = opening / 2.0
    y = MOUTH_Y + 0.25 * opening
    return {
        "mouth_left": (-MOUTH_HALF_WIDTH, y),
        "mouth_right": (MOUTH_HALF_WIDTH, y),
        "lip_top_inner": (0.0, y - half),
        "lip_bottom_inner": (0.0, y + half),
        "lip_top_outer": (0.0, y - half - LIP),
        "lip_bottom_outer": (0.0, y + half + LIP),
        "lip_top_left": (-15.0, y - 0.8 * half - LIP + 1.0),
        "lip_top_right": (15.0, y - 0.8 * half - LIP + 1.0),
        "lip_bottom_left": (-15.0, y + 0.8 * half + LIP - 1.0),
        "lip_bottom_right": (15.0, y + 0.8 * half + LIP - 1.0),
        "jaw_bottom": (0.0, 140.0 + jaw_drop),
    }


def local_landmarks(opening: float) -> dict:
    pts = dict(_STATIC_POINTS)
    pts.update(mouth_points(opening, jaw_drop=0.15 * opening))
    return pts


def _envelope(n_frames: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n_frames) / FPS
    env = np.zeros(n_frames)
    for _ in range(4):
        f = rng.uniform(0.6, 3.0)
        env += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    env -= env.min()
    return env / max(env.max(), 1e-12)


def _soft_ellipse(xs, ys, cx, cy, a, b, angle, softness=0.9):
    c, s = math.cos(angle), math.sin(angle)
    u = (xs - cx) * c + (ys - cy) * s
    v = -(xs - cx) * s + (ys - cy) * c
    r = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    d = (r - 1.0) * min(a, b)
    return 0.5 * (1.0 - np.tanh(d / softness))


def _paint(img, alpha, color, box):
    y0, y1, x0, x1 = box
    view = img[y0:y1, x0:x1]
    view *= 1.0 - alpha[..., None]
    view += alpha[..., None] * np.asarray(color)


def _box(cx, cy, r, h, w):
    return (
        max(0, int(cy - r)), min(h, int(cy + r) + 2),
        max(0, int(cx - r)), min(w, int(cx + r) + 2),
    )


def pose_at(t: int, n_frames: int, phase: float) -> AffineTransform:
    """Face-local -> frame similarity for frame ``t``: slow drift, roll within ±8 degrees."""
    w = 2 * np.pi * t / max(n_frames, 2)
    scale = 1.0 + 0.03 * math.sin(w + phase)
    roll = math.radians(8.0) * math.sin(0.7 * w + phase)
    cx = FRAME_SIZE[1] / 2 + 8.0 * math.sin(0.5 * w + 2 * phase)
    cy = FRAME_SIZE[0] / 2 - 10.0 + 5.0 * math.cos(0.9 * w + phase)
    return AffineTransform.similarity(scale, roll, (cx, cy))


def render_face(pose: AffineTransform, opening: float, background: np.ndarray) -> np.ndarray:
    h, w = background.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    scale = math.sqrt(abs(pose.det))
    roll = math.atan2(pose.linear[1, 0], pose.linear[0, 0])
    img = background.copy()

    def at(x, y):
        return pose.apply([x, y])

    def ell(x, y, a, b, color, soft=0.9):
        cx, cy = at(x, y)
        # Outside max(a, b) + 8 * softness the ellipse's alpha is below 1e-7.
        box = _box(cx, cy, max(a, b) * scale + 8 * soft, h, w)
        y0, y1, x0, x1 = box
        alpha = _soft_ellipse(xs[y0:y1, x0:x1], ys[y0:y1, x0:x1], cx, cy, a * scale, b * scale, roll, soft)
        _paint(img, alpha, color, box)

    ell(0, 60, 96, 120, (0.86, 0.66, 0.52), 1.2)  # head
    ell(-92, 30, 10, 22, (0.80, 0.58, 0.46))  # ears
    ell(92, 30, 10, 22, (0.80, 0.58, 0.46))
    cx, cy = at(-20, 40)
    y0, y1, x0, x1 = _box(cx, cy, 90 * scale + 200.0, h, w)
    shade = 0.10 * _soft_ellipse(xs[y0:y1, x0:x1], ys[y0:y1, x0:x1], cx, cy, 70 * scale, 90 * scale, roll, 25.0)
    img[y0:y1, x0:x1] += shade[..., None] * np.array([0.6, 0.5, 0.4])  # soft highlight
    for sx in (-45, 45):
        ell(sx, 0, 16, 8, (0.95, 0.95, 0.93))
        ell(sx, 0, 6, 6, (0.20, 0.15, 0.10))
        ell(sx, -16, 18, 3, (0.35, 0.25, 0.18))  # brows
    ell(0, 58, 9, 16, (0.78, 0.56, 0.44), 2.0)
    ell(0, 72, 11, 6, (0.70, 0.48, 0.38))
    y = MOUTH_Y + 0.25 * opening
    ell(0, y, MOUTH_HALF_WIDTH, opening / 2 + LIP, (0.72, 0.33, 0.33))  # lips
    if opening > 0.5:
        ell(0, y, MOUTH_HALF_WIDTH - 5, opening / 2, (0.25, 0.08, 0.10))
        ell(0, y - opening / 2 + 2, MOUTH_HALF_WIDTH - 10, min(3.0, opening / 4), (0.92, 0.9, 0.86))  # teeth
    ell(0, 150, 30, 8, (0.80, 0.60, 0.47), 4.0)  # chin shading
    return np.clip(img, 0.0, 1.0)


def _background(rng: np.random.Generator) -> np.ndarray:
    h, w = FRAME_SIZE
    ys, xs = np.mgrid[0:h, 0:w] / float(max(h, w))
    base = np.array(rng.uniform(0.25, 0.6, 3))
    img = np.empty((h, w, 3))
    for c in range(3):
        fx, fy = rng.uniform(1.0, 3.0, 2)
        img[..., c] = base[c] + 0.12 * np.sin(2 * np.pi * (fx * xs + fy * ys) + rng.uniform(0, 2 * np.pi)) + 0.1 * (xs - 0.5)
    return np.clip(img, 0.0, 1.0)


def synth_audio(env: np.ndarray, fps: float, rng: np.random.Generator, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """Harmonic voice-like signal whose amplitude follows ``env`` (one value per video frame)."""
    n = int(round(len(env) * sample_rate / fps))
    t = np.arange(n) / sample_rate
    frame_pos = t * fps - 0.5
    amp = np.interp(frame_pos, np.arange(len(env)), env)
    f0 = rng.uniform(110.0, 180.0)
    carrier = np.zeros(n)
    for k in range(1, 8):
        carrier += np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k
    carrier += 0.05 * rng.standard_normal(n)
    carrier /= np.abs(carrier).max()
    return AudioClip(np.clip(0.6 * (0.03 + amp) * carrier, -1.0, 1.0), sample_rate)


def make_track(seed: int, n_frames: int) -> Track:
    """Build a synthetic track (frames, audio, exact frame-space landmarks) at 25 fps."""
    if n_frames < 15:
        raise ValidationError(f"fixture needs at least 15 frames, got {n_frames}")
    rng = np.random.default_rng(seed)
    env = _envelope(n_frames, rng)
    background = _background(rng)
    phase = rng.uniform(0, 2 * np.pi)
    audio = synth_audio(env, FPS, rng)
    frames, landmarks = [], []
    for t in range(n_frames):
        opening = 2.0 + 24.0 * env[t]
        pose = pose_at(t, n_frames, phase)
        frames.append(render_face(pose, opening, background))
        names = list(local_landmarks(opening))
        pts = pose.apply(np.array([local_landmarks(opening)[k] for k in names]))
        landmarks.append(LandmarkSet(dict(zip(names, map(tuple, pts))), "frame"))
    return Track(tuple(frames), audio, FPS, tuple(landmarks), seed=seed)


def generate_fixture(seed: int, n_frames: int, out) -> Track:
    from .bundle import load_track, save_track

    save_track(make_track(seed, n_frames), out)
    return load_track(out)


def pose_sweep_landmarks(n_frames: int = 200, seed: int = 0, max_roll_deg: float = 25.0) -> list[LandmarkSet]:
    """Crop-space landmark sets sweeping head roll and mouth opening across the sequence."""
    rng = np.random.default_rng(seed)
    scale = 64.0 / EYE_DISTANCE
    out = []
    for t in range(n_frames):
        frac = t / max(n_frames - 1, 1)
        roll = math.radians(-max_roll_deg + 2 * max_roll_deg * frac)
        opening = 2.0 + 24.0 * (0.5 + 0.5 * math.sin(2 * np.pi * 3 * frac))
        pose = AffineTransform.similarity(scale, roll, (CROP_SIZE / 2, CROP_SIZE / 2))
        local = local_landmarks(opening)
        names = list(local)
        pts = pose.apply(np.array([local[k] for k in names])) + rng.normal(0, 0.2, (len(names), 2))
        out.append(LandmarkSet(dict(zip(names, map(tuple, pts))), "crop"))
    return out
