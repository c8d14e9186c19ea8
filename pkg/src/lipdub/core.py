"""Domain types shared by all stages.

Images are plain ``numpy`` float arrays of shape ``(H, W)`` or ``(H, W, C)``
with values in ``[0, 1]`` and row-major ``[y, x]`` addressing; ``check_image``
enforces that convention at module boundaries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import MissingLandmarkError, ValidationError

CROP_SIZE = 256
SAMPLE_RATE = 16000
MAX_UTTERANCE_SECONDS = 12.0
FPS_RANGE = (23.0, 30.0)

ALIGNMENT_LANDMARKS = ("left_eye", "right_eye", "eye_midpoint", "nose_bridge_mid")

# Regression targets of the landmark loss, in a fixed order.
MOUTH_JAW_LANDMARKS = (
    "mouth_left",
    "mouth_right",
    "lip_top_outer",
    "lip_top_inner",
    "lip_bottom_inner",
    "lip_bottom_outer",
    "lip_top_left",
    "lip_top_right",
    "lip_bottom_left",
    "lip_bottom_right",
    "jaw_left",
    "jaw_right",
    "jaw_bottom",
)

FACE_LANDMARKS = (
    "left_eye",
    "right_eye",
    "eye_midpoint",
    "nose_bridge_mid",
    "nose_tip",
    "left_ear",
    "right_ear",
    "chin_left",
    "chin_center",
    "chin_right",
)

ALL_LANDMARKS = FACE_LANDMARKS + MOUTH_JAW_LANDMARKS


def check_image(img, *, name="image") -> np.ndarray:
    """Return ``img`` as a float64 array after checking shape and range."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] not in (1, 3):
        raise ValidationError(f"{name}: channels must be 1 or 3, got {arr.shape[2]}")
    if arr.ndim not in (2, 3) or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValidationError(f"{name}: expected non-empty HxW or HxWxC array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError(f"{name}: values outside [0, 1]")
    return arr


def to_gray(img: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma for RGB input; single-channel input is returned squeezed."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[..., 0]
    return img @ np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class LandmarkSet:
    points: Mapping[str, tuple[float, float]]
    space: str = "frame"

    def __post_init__(self):
        if self.space not in ("frame", "crop"):
            raise ValidationError(f"coordinate space must be 'frame' or 'crop', got {self.space!r}")
        pts = {}
        for name, xy in dict(self.points).items():
            x, y = (float(v) for v in xy)
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValidationError(f"landmark {name!r} has non-finite coordinates")
            pts[str(name)] = (x, y)
        object.__setattr__(self, "points", MappingProxyType(pts))

    def __getitem__(self, name: str) -> tuple[float, float]:
        try:
            return self.points[name]
        except KeyError:
            raise MissingLandmarkError(name) from None

    def __contains__(self, name) -> bool:
        return name in self.points

    def names(self) -> tuple[str, ...]:
        return tuple(self.points)

    def array(self, names: Iterable[str]) -> np.ndarray:
        """Stack the named points into an ``(n, 2)`` array."""
        return np.array([self[n] for n in names], dtype=np.float64).reshape(-1, 2)

    def require(self, names: Iterable[str]) -> None:
        for n in names:
            if n not in self.points:
                raise MissingLandmarkError(n)

    def replace(self, **updates) -> "LandmarkSet":
        pts = dict(self.points)
        pts.update(updates)
        return LandmarkSet(pts, self.space)

    def transformed(self, t: "AffineTransform", space: str | None = None) -> "LandmarkSet":
        names = list(self.points)
        mapped = t.apply(self.array(names))
        return LandmarkSet(dict(zip(names, map(tuple, mapped))), space or self.space)

    def to_dict(self) -> dict:
        return {n: [x, y] for n, (x, y) in self.points.items()}

    def __eq__(self, other):
        if not isinstance(other, LandmarkSet):
            return NotImplemented
        return self.space == other.space and dict(self.points) == dict(other.points)

    def __hash__(self):
        return hash((self.space, tuple(sorted(self.points.items()))))


@dataclass(frozen=True, eq=False)
class AffineTransform:
    """2x3 matrix mapping source coordinates ``(x, y)`` to destination coordinates."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValidationError(f"affine matrix must be 2x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValidationError("affine matrix has non-finite entries")
        lin = m[:, :2]
        if lin[0, 0] * lin[1, 1] - lin[0, 1] * lin[1, 0] == 0.0:
            raise ValidationError("affine linear part is singular")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.eye(2, 3))

    @classmethod
    def from_parts(cls, linear, translation=(0.0, 0.0)) -> "AffineTransform":
        m = np.zeros((2, 3))
        m[:, :2] = linear
        m[:, 2] = translation
        return cls(m)

    @classmethod
    def similarity(cls, scale=1.0, angle=0.0, translation=(0.0, 0.0)) -> "AffineTransform":
        c, s = math.cos(angle), math.sin(angle)
        return cls.from_parts(scale * np.array([[c, -s], [s, c]]), translation)

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:, :2]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:, 2]

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.linear))

    def homogeneous(self) -> np.ndarray:
        return np.vstack([self.matrix, [0.0, 0.0, 1.0]])

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.linear.T + self.translation

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return AffineTransform((self.homogeneous() @ other.homogeneous())[:2])

    def __matmul__(self, other):
        return self.compose(other)

    def is_procrustes(self, tol=1e-6) -> bool:
        a = self.linear
        ata = a.T @ a
        s2 = 0.5 * np.trace(ata)
        return self.det > 0 and bool(np.allclose(ata, s2 * np.eye(2), atol=tol * max(1.0, s2)))

    def tolist(self) -> list:
        return self.matrix.tolist()

    def __eq__(self, other):
        if not isinstance(other, AffineTransform):
            return NotImplemented
        return bool(np.array_equal(self.matrix, other.matrix))

    def __hash__(self):
        return hash(self.matrix.tobytes())

    def __repr__(self):
        return f"AffineTransform({self.matrix.tolist()})"


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(s)):
            raise ValidationError("audio samples must be finite")
        if s.size and np.abs(s).max() > 1.0:
            raise ValidationError("audio samples must lie in [-1, 1]")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, AudioClip):
            return NotImplemented
        return self.sample_rate == other.sample_rate and np.array_equal(self.samples, other.samples)


def frame_sample_bounds(frame: int, fps: float, sample_rate: int) -> tuple[int, int]:
    """Half-open sample range spanned by video frame ``frame`` (frame 0 starts at sample 0)."""
    return round(frame * sample_rate / fps), round((frame + 1) * sample_rate / fps)


@dataclass(frozen=True, eq=False)
class Utterance:
    frames: tuple
    audio: AudioClip
    fps: float
    per_frame_landmarks: tuple
    per_frame_transform: tuple
    language: str = "und"
    source_frame_indices: tuple = ()
    source_sample_range: tuple = (0, 0)
    transcription: str | None = None

    def __post_init__(self):
        frames = tuple(check_image(f, name=f"frame {i}") for i, f in enumerate(self.frames))
        for f in frames:
            f.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "per_frame_landmarks", tuple(self.per_frame_landmarks))
        object.__setattr__(self, "per_frame_transform", tuple(self.per_frame_transform))
        object.__setattr__(self, "source_frame_indices", tuple(int(i) for i in self.source_frame_indices))
        object.__setattr__(self, "source_sample_range", tuple(int(i) for i in self.source_sample_range))
        object.__setattr__(self, "fps", float(self.fps))
        self.validate()

    def validate(self) -> None:
        n = len(self.frames)
        if n == 0:
            raise ValidationError("utterance has no frames")
        counts = {
            "per_frame_landmarks": len(self.per_frame_landmarks),
            "per_frame_transform": len(self.per_frame_transform),
            "source_frame_indices": len(self.source_frame_indices),
        }
        for key, count in counts.items():
            if count != n:
                raise ValidationError(f"len({key}) == {count} but len(frames) == {n}")
        for i, f in enumerate(self.frames):
            if f.shape[:2] != (CROP_SIZE, CROP_SIZE) or f.ndim != 3 or f.shape[2] != 3:
                raise ValidationError(f"frame {i} has shape {f.shape}; canonical crops are {CROP_SIZE}x{CROP_SIZE}x3")
        for i, lm in enumerate(self.per_frame_landmarks):
            if not isinstance(lm, LandmarkSet) or lm.space != "crop":
                raise ValidationError(f"landmarks of frame {i} must be a crop-space LandmarkSet")
        for i, t in enumerate(self.per_frame_transform):
            if not isinstance(t, AffineTransform) or abs(t.det) < 1e-12:
                raise ValidationError(f"transform of frame {i} must be an invertible AffineTransform")
        lo, hi = FPS_RANGE
        if not (lo <= self.fps <= hi):
            raise ValidationError(f"fps {self.fps} outside [{lo:g}, {hi:g}]")
        duration = n / self.fps
        if duration > MAX_UTTERANCE_SECONDS:
            raise ValidationError(
                f"utterance duration {duration:.3f} s exceeds the {MAX_UTTERANCE_SECONDS:g} s cap"
            )
        start, end = self.source_sample_range
        if end < start:
            raise ValidationError("source_sample_range end precedes start")
        if end - start != len(self.audio):
            raise ValidationError(
                f"source_sample_range spans {end - start} samples but audio has {len(self.audio)}"
            )
        if (end - start) / self.audio.sample_rate < (n - 1) / self.fps - 1e-9:
            raise ValidationError("audio does not cover the frame span")
        if not isinstance(self.language, str) or not self.language:
            raise ValidationError("language tag must be a non-empty string")

    def __len__(self):
        return len(self.frames)

    @property
    def duration(self) -> float:
        return len(self.frames) / self.fps


@dataclass(frozen=True)
class UtteranceChunk:
    """Contiguous slice of a track plus its context buffers.

    ``frames`` and ``audio_window`` are empty on skeletons produced by
    :func:`lipdub.chunking.attach_buffers` and filled by ``materialize``.
    """

    core_range: tuple[int, int]
    buffer_pre: int
    buffer_post: int
    max_len: int
    buffer: int = 10
    frames: tuple = field(default=(), repr=False)
    audio_window: AudioClip | None = field(default=None, repr=False)

    def __post_init__(self):
        start, end = self.core_range
        if not (0 <= start < end):
            raise ValidationError(f"invalid core range {self.core_range}")
        if end - start > self.max_len:
            raise ValidationError(f"chunk core length {end - start} exceeds max {self.max_len}")
        for name in ("buffer_pre", "buffer_post"):
            v = getattr(self, name)
            if not (0 <= v <= self.buffer):
                raise ValidationError(f"{name}={v} outside [0, {self.buffer}]")

    @property
    def start(self) -> int:
        return self.core_range[0]

    @property
    def end(self) -> int:
        return self.core_range[1]

    @property
    def span(self) -> tuple[int, int]:
        """Frame range including buffers."""
        return self.start - self.buffer_pre, self.end + self.buffer_post

    @property
    def pad_audio_pre(self) -> bool:
        return self.buffer_pre < self.buffer

    @property
    def pad_audio_post(self) -> bool:
        return self.buffer_post < self.buffer

    def frame_indices(self) -> range:
        return range(*self.span)


def as_landmark_sequence(items: Sequence, space: str) -> tuple:
    return tuple(lm if isinstance(lm, LandmarkSet) else LandmarkSet(lm, space) for lm in items)
