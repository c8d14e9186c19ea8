"""On-disk bundles: ``manifest.json`` + ``frames/%06d.png`` + ``audio.wav``.

Two manifest kinds share the layout. Utterance bundles hold canonical crops
with per-frame crop-space landmarks and frame->crop transforms; track bundles
hold full frames (pipeline input and rendered output). Field names are fixed
by the JSON schemas in ``lipdub/data``.
"""
from __future__ import annotations

import json
import wave
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from PIL import Image

from .core import (
    CROP_SIZE,
    SAMPLE_RATE,
    AffineTransform,
    AudioClip,
    LandmarkSet,
    Utterance,
    check_image,
)
from .errors import BundleError, LipdubError, ValidationError

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
AUDIO_FILE = "audio.wav"


@lru_cache(maxsize=None)
def load_schema(kind: str) -> dict:
    text = resources.files("lipdub").joinpath("data", f"{kind}.schema.json").read_text()
    return json.loads(text)


def _validate_manifest(manifest, kind: str) -> None:
    if not isinstance(manifest, dict):
        raise BundleError("manifest must be a JSON object")
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise BundleError(f"schema_version mismatch: expected {SCHEMA_VERSION}, got {version!r}")
    try:
        jsonschema.validate(manifest, load_schema(kind))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise BundleError(f"manifest invalid at {where}: {exc.message}") from None


def write_png(path: Path, img: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path, format="PNG", compress_level=1)


def read_png(path: Path) -> np.ndarray:
    if not path.is_file():
        raise BundleError(f"missing frame file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise BundleError(f"corrupt frame file {path}: {exc}") from None
    return arr


def write_wav(path: Path, audio: AudioClip) -> None:
    pcm = np.clip(np.rint(np.clip(audio.samples, -1.0, 1.0) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(audio.sample_rate))
        w.writeframes(pcm.tobytes())


def read_wav(path: Path, expected_rate: int = SAMPLE_RATE) -> AudioClip:
    if not path.is_file():
        raise BundleError(f"missing audio file: {path}")
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            data = w.readframes(w.getnframes())
    except (wave.Error, EOFError, OSError) as exc:
        raise BundleError(f"corrupt audio file {path}: {exc}") from None
    if channels != 1 or width != 2:
        raise BundleError(f"{path}: expected mono PCM16, got {channels} channel(s) of {8 * width}-bit")
    if rate != expected_rate:
        raise BundleError(f"{path}: sample rate {rate} Hz, {expected_rate} Hz required (no implicit resampling)")
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32767.0
    return AudioClip(np.clip(samples, -1.0, 1.0), rate)


def _write_frames(root: Path, frames) -> list[str]:
    (root / "frames").mkdir(parents=True, exist_ok=True)
    names = []
    for i, f in enumerate(frames):
        rel = f"frames/{i:06d}.png"
        write_png(root / rel, f)
        names.append(rel)
    return names


def _write_manifest(root: Path, manifest: dict) -> None:
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _read_manifest(root: Path, kind: str) -> dict:
    path = root / MANIFEST
    if not path.is_file():
        raise BundleError(f"missing manifest: {path}")
    try:
        manifest = json.loads(path.read_text())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BundleError(f"corrupt manifest {path}: {exc}") from None
    _validate_manifest(manifest, kind)
    return manifest


def _read_audio(root: Path, entry: dict) -> AudioClip:
    if entry["sample_rate"] != SAMPLE_RATE:
        raise BundleError(f"audio sample_rate {entry['sample_rate']} Hz, {SAMPLE_RATE} Hz required (no implicit resampling)")
    audio = read_wav(root / entry["file"])
    if len(audio) != entry["n_samples"]:
        raise BundleError(f"audio has {len(audio)} samples, manifest says {entry['n_samples']}")
    return audio


def save_utterance(u: Utterance, path) -> None:
    """Write ``u`` as an utterance bundle directory at ``path``."""
    if not isinstance(u, Utterance):
        raise ValidationError("save_utterance expects an Utterance")
    u.validate()
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "utterance",
        "fps": u.fps,
        "language": u.language,
        "crop_size": [CROP_SIZE, CROP_SIZE],
        "frames": _write_frames(root, u.frames),
        "audio": {"file": AUDIO_FILE, "sample_rate": int(u.audio.sample_rate), "n_samples": len(u.audio)},
        "source_frame_indices": list(u.source_frame_indices),
        "source_sample_range": list(u.source_sample_range),
        "landmarks": [lm.to_dict() for lm in u.per_frame_landmarks],
        "transforms": [t.tolist() for t in u.per_frame_transform],
        "transcription": u.transcription,
    }
    write_wav(root / AUDIO_FILE, u.audio)
    _write_manifest(root, manifest)


def load_utterance(path) -> Utterance:
    root = Path(path)
    manifest = _read_manifest(root, "utterance")
    if manifest["crop_size"] != [CROP_SIZE, CROP_SIZE]:
        raise ValidationError(f"crop_size {manifest['crop_size']}: only {CROP_SIZE}x{CROP_SIZE} crops are supported")
    frames = [read_png(root / rel) for rel in manifest["frames"]]
    audio = _read_audio(root, manifest["audio"])
    try:
        return Utterance(
            frames=tuple(frames),
            audio=audio,
            fps=manifest["fps"],
            per_frame_landmarks=tuple(LandmarkSet(d, "crop") for d in manifest["landmarks"]),
            per_frame_transform=tuple(AffineTransform(m) for m in manifest["transforms"]),
            language=manifest["language"],
            source_frame_indices=tuple(manifest["source_frame_indices"]),
            source_sample_range=tuple(manifest["source_sample_range"]),
            transcription=manifest.get("transcription"),
        )
    except LipdubError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{root}: {exc}") from None


@dataclass(frozen=True, eq=False)
class Track:
    """A full-frame face track: frames at native resolution, audio, and frame-space landmarks."""

    frames: tuple
    audio: AudioClip
    fps: float
    landmarks: tuple = ()
    language: str = "und"
    seed: int | None = field(default=None, compare=False)

    def __post_init__(self):
        frames = tuple(check_image(f, name=f"frame {i}") for i, f in enumerate(self.frames))
        if not frames:
            raise ValidationError("track has no frames")
        shape = frames[0].shape
        for i, f in enumerate(frames):
            if f.shape != shape:
                raise ValidationError(f"frame {i} has shape {f.shape}, expected {shape}")
        object.__setattr__(self, "frames", frames)
        lms = tuple(lm if isinstance(lm, LandmarkSet) else LandmarkSet(lm, "frame") for lm in self.landmarks)
        if lms and len(lms) != len(frames):
            raise ValidationError(f"track has {len(frames)} frames but {len(lms)} landmark sets")
        object.__setattr__(self, "landmarks", lms)
        if self.fps <= 0:
            raise ValidationError("fps must be positive")

    def __len__(self):
        return len(self.frames)

    @property
    def frame_size(self) -> tuple[int, int]:
        return self.frames[0].shape[:2]


def save_track(track: Track, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    h, w = track.frame_size
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "track",
        "fps": float(track.fps),
        "language": track.language,
        "frame_size": [int(h), int(w)],
        "frames": _write_frames(root, track.frames),
        "audio": {"file": AUDIO_FILE, "sample_rate": int(track.audio.sample_rate), "n_samples": len(track.audio)},
    }
    if track.landmarks:
        manifest["landmarks"] = [lm.to_dict() for lm in track.landmarks]
    if track.seed is not None:
        manifest["seed"] = int(track.seed)
    write_wav(root / AUDIO_FILE, track.audio)
    _write_manifest(root, manifest)


def load_track(path) -> Track:
    root = Path(path)
    manifest = _read_manifest(root, "track")
    frames = [read_png(root / rel) for rel in manifest["frames"]]
    h, w = manifest["frame_size"]
    for rel, f in zip(manifest["frames"], frames):
        if f.shape[:2] != (h, w):
            raise BundleError(f"{rel}: size {f.shape[1]}x{f.shape[0]} differs from frame_size {w}x{h}")
    audio = _read_audio(root, manifest["audio"])
    try:
        return Track(
            frames=tuple(frames),
            audio=audio,
            fps=manifest["fps"],
            landmarks=tuple(LandmarkSet(d, "frame") for d in manifest.get("landmarks", [])),
            language=manifest.get("language", "und"),
            seed=manifest.get("seed"),
        )
    except LipdubError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{root}: {exc}") from None
