"""Mouth-synthesis contract, the non-neural baseline, and the information-leak audit.

A synthesizer maps ``(masked frames, audio windows, references)`` to full
256x256 crops. It may only change pixels inside the mask rectangle; the
dispatcher :func:`synthesize` checks the request for the four leak channels
before the call and the untouched-background guarantee after it.

Neural implementations are expected to follow the encoder/decoder shape
contract in ``SHAPE_CONTRACT``; only the baseline ships here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import ALIGNMENT_LANDMARKS, MOUTH_JAW_LANDMARKS, LandmarkSet, Utterance, to_gray
from .errors import LeakViolation, ValidationError
from .geometry import FACE_TEMPLATE, crop_transform, invert_affine
from .masking import RectMask, apply_rect_mask, apply_reference_mask
from .metrics import attention_weights

# Layer-by-layer tensor shapes (C x H x W, or C x L for audio) of the reference U-Net.
SHAPE_CONTRACT = {
    "image_encoder": [
        (3, 256, 256), (16, 256, 256), (32, 128, 128), (64, 64, 64), (128, 32, 32),
        (256, 16, 16), (256, 8, 8), (512, 4, 4), (512, 2, 2), (512, 1, 1),
    ],
    "audio_encoder": [(64, 24), (128, 12), (512, 6), (512, 1)],
    "image_decoder": [
        (512, 1, 1), (512, 2, 2), (512, 4, 4), (256, 8, 8), (256, 16, 16),
        (128, 32, 32), (64, 64, 64), (32, 128, 128), (16, 256, 256), (3, 256, 256),
    ],
    "training_subsequence_frames": 9,
    "fine_tune_steps": 10_000,
}

EYE_NOSE_LANDMARKS = frozenset(ALIGNMENT_LANDMARKS) | {"nose_tip"}
MIN_MASK_FRACTION = 0.3
EMBED_GRID = 16
EMBED_DIM = 32
PROJECTION_SEED = 1234


@dataclass(frozen=True, eq=False)
class SynthesisRequest:
    masked_frames: tuple
    audio_windows: tuple
    reference_frames: tuple
    rect: RectMask
    fps: float
    frame_indices: tuple
    reference_indices: tuple

    def __post_init__(self):
        for name in ("masked_frames", "audio_windows", "reference_frames", "frame_indices", "reference_indices"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.masked_frames) != len(self.audio_windows) or len(self.masked_frames) != len(self.frame_indices):
            raise ValidationError("masked_frames, audio_windows and frame_indices must have equal length")
        if len(self.reference_frames) != len(self.reference_indices):
            raise ValidationError("reference_frames and reference_indices must have equal length")

    def __len__(self):
        return len(self.masked_frames)


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    frames: tuple

    def __len__(self):
        return len(self.frames)


def build_request(
    crops: Sequence,
    frame_indices: Sequence[int],
    reference_indices: Sequence[int],
    audio_windows: Sequence,
    rect: RectMask,
    fps: float,
) -> SynthesisRequest:
    """Mask target crops and references the leak-safe way."""
    return SynthesisRequest(
        masked_frames=tuple(apply_rect_mask(crops[i], rect) for i in frame_indices),
        audio_windows=tuple(np.asarray(a, dtype=np.float64) for a in audio_windows),
        reference_frames=tuple(apply_reference_mask(crops[i], rect) for i in reference_indices),
        rect=rect,
        fps=fps,
        frame_indices=tuple(int(i) for i in frame_indices),
        reference_indices=tuple(int(i) for i in reference_indices),
    )


def _outside(img: np.ndarray, rect: RectMask) -> np.ndarray:
    keep = np.ones(img.shape[:2], dtype=bool)
    keep[rect.region(*img.shape[:2])] = False
    return img[keep]


def check_request(req: SynthesisRequest) -> None:
    """Raise :class:`LeakViolation` naming the first channel the request opens."""
    for i, f in zip(req.frame_indices, req.masked_frames):
        if np.any(np.asarray(f)[req.rect.region(*np.shape(f)[:2])] != 0):
            raise LeakViolation(1, f"masked frame {i} has non-zero pixels inside the mask")
    aliased = sorted(set(req.reference_indices) & set(req.frame_indices))
    if aliased:
        raise LeakViolation(4, f"reference frames alias target frames {aliased}")
    for i, f in zip(req.reference_indices, req.reference_frames):
        if np.any(_outside(np.asarray(f), req.rect) != 0):
            raise LeakViolation(4, f"reference frame {i} keeps context outside the mouth region")


class Synthesizer:
    """Base class for mouth synthesizers.

    Subclasses implement :meth:`synthesize_frames`. Instances must be safe for
    concurrent read-only use once constructed.
    """

    name = "abstract"
    # Identity synthesizers return the input video untouched, so rendering is skipped.
    identity = False

    def adapt(self, utterances: Sequence[Utterance]) -> None:
        """Speaker fine-tuning hook; stateless synthesizers ignore it."""

    def synthesize_frames(self, req: SynthesisRequest) -> list:
        raise NotImplementedError


_REGISTRY: dict[str, Callable[..., Synthesizer]] = {}


def register(name: str):
    def deco(factory):
        _REGISTRY[name] = factory
        return factory

    return deco


def available() -> list[str]:
    return sorted(_REGISTRY)


def create(name: str, **context) -> Synthesizer:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValidationError(f"unknown synthesizer {name!r}; available: {available()}") from None
    return factory(**context)


def synthesize(req: SynthesisRequest, synth: Synthesizer) -> SynthesisResult:
    check_request(req)
    frames = synth.synthesize_frames(req)
    if len(frames) != len(req):
        raise ValidationError(f"synthesizer returned {len(frames)} frames for {len(req)} targets")
    out = []
    for i, (src, got) in enumerate(zip(req.masked_frames, frames)):
        got = np.asarray(got, dtype=np.float64)
        if got.shape != np.shape(src):
            raise ValidationError(f"synthesized frame {i} has shape {got.shape}, expected {np.shape(src)}")
        if not np.array_equal(_outside(got, req.rect), _outside(np.asarray(src), req.rect)):
            raise ValidationError(f"synthesizer '{synth.name}' changed pixels outside the mask in frame {i}")
        out.append(got)
    return SynthesisResult(tuple(out))


def _area_resize(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape
    rows = np.linspace(0, h, size + 1).astype(int)
    cols = np.linspace(0, w, size + 1).astype(int)
    sums = np.add.reduceat(np.add.reduceat(img, rows[:-1], axis=0), cols[:-1], axis=1)
    return sums / np.outer(np.diff(rows), np.diff(cols))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n == 0, 1.0, n)


def baseline_reference_blend(
    req: SynthesisRequest, weights: np.ndarray | None = None, *, flip_sign: bool = False
) -> SynthesisResult:
    """Fill the mouth rectangle with an attention-weighted blend of reference mouths.

    References are embedded as 16x16 area-averaged luma of their mouth region,
    the audio window as its mean feature row; both are projected to a common
    dimension by fixed seeded random matrices. Attention weights are averaged
    over a 3-frame window for temporal smoothness. ``weights`` (frames x refs)
    overrides the attention.
    """
    if not req.reference_frames:
        raise ValidationError("baseline synthesis needs at least one reference frame")
    region = None
    mouths = []
    for f in req.reference_frames:
        f = np.asarray(f, dtype=np.float64)
        region = req.rect.region(*f.shape[:2])
        mouths.append(f[region])
    mouths = np.stack(mouths)  # (N, h, w[, C])
    n_refs, n_frames = len(mouths), len(req)

    if weights is None:
        rng = np.random.default_rng(PROJECTION_SEED)
        ref_emb = np.stack([_area_resize(to_gray(m), EMBED_GRID).reshape(-1) for m in mouths])
        audio_emb = np.stack([np.asarray(a).mean(axis=0) for a in req.audio_windows])
        p_ref = rng.standard_normal((EMBED_DIM, ref_emb.shape[1])) / np.sqrt(ref_emb.shape[1])
        p_aud = rng.standard_normal((EMBED_DIM, audio_emb.shape[1])) / np.sqrt(audio_emb.shape[1])
        keys = _unit(audio_emb @ p_aud.T)
        refs = _unit((ref_emb - ref_emb.mean(axis=0)) @ p_ref.T) if n_refs > 1 else _unit(ref_emb @ p_ref.T)
        raw = np.stack([attention_weights(k, refs, flip_sign=flip_sign)[0] for k in keys])
        weights = np.empty_like(raw)
        for t in range(n_frames):
            lo, hi = max(0, t - 1), min(n_frames, t + 2)
            weights[t] = raw[lo:hi].mean(axis=0)
    weights = np.asarray(weights, dtype=np.float64).reshape(n_frames, n_refs)

    out = []
    for t, masked in enumerate(req.masked_frames):
        frame = np.array(masked, dtype=np.float64, copy=True)
        frame[region] = np.tensordot(weights[t], mouths, axes=(0, 0))
        # Keep the blend inside the per-pixel reference hull despite rounding.
        frame[region] = np.clip(frame[region], mouths.min(axis=0), mouths.max(axis=0))
        out.append(frame)
    return SynthesisResult(tuple(out))


@register("baseline")
class BaselineSynthesizer(Synthesizer):
    name = "baseline"

    def __init__(self, flip_sign: bool = False, **_context):
        self.flip_sign = flip_sign

    def synthesize_frames(self, req):
        return list(baseline_reference_blend(req, flip_sign=self.flip_sign).frames)


@register("oracle")
class OracleSynthesizer(Synthesizer):
    """Returns the true crops; used to measure the render round trip."""

    name = "oracle"

    def __init__(self, crops: Sequence | None = None, **_context):
        if crops is None:
            raise ValidationError("oracle synthesizer needs the ground-truth crops")
        self.crops = crops

    def synthesize_frames(self, req):
        return [np.asarray(self.crops[i], dtype=np.float64) for i in req.frame_indices]


@register("passthrough")
class PassthroughSynthesizer(OracleSynthesizer):
    """Identity stage: the pipeline with this synthesizer must leave the video unchanged."""

    name = "passthrough"
    identity = True


@dataclass
class LeakAuditReport:
    channels: dict = field(default_factory=dict)

    def record(self, channel: int, passed: bool, detail: str = "") -> None:
        self.channels[channel] = {"passed": bool(passed), "detail": detail}

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.channels.values())

    def failed_channels(self) -> list[int]:
        return sorted(k for k, c in self.channels.items() if not c["passed"])

    def to_record(self) -> dict:
        return {str(k): v for k, v in sorted(self.channels.items())}


def _perturbation_invariant(lm_frame: LandmarkSet, trace: Sequence[str], template: dict) -> bool:
    base = crop_transform(lm_frame, trace, template)
    for dy in (-20.0, 20.0):
        moved = {
            n: (x, y + dy)
            for n, (x, y) in lm_frame.points.items()
            if n in MOUTH_JAW_LANDMARKS or n.startswith("chin")
        }
        if crop_transform(lm_frame.replace(**moved), trace, template) != base:
            return False
    return True


def leak_audit(
    u: Utterance,
    req: SynthesisRequest,
    crop_fn_trace: Sequence[str],
    *,
    min_mask_fraction: float = MIN_MASK_FRACTION,
    template: dict | None = None,
) -> LeakAuditReport:
    """Check all four leak channels; ``req.frame_indices`` index into ``u``."""
    report = LeakAuditReport()
    rect = req.rect

    bad = [
        i for i, f in zip(req.frame_indices, req.masked_frames)
        if np.any(np.asarray(f)[rect.region(*np.shape(f)[:2])] != 0)
    ]
    report.record(1, not bad, f"non-zero pixels inside mask in frames {bad}" if bad else "mask region zeroed")

    h, w = u.frames[0].shape[:2]
    frac = rect.area_fraction(h, w)
    uncovered = []
    for i in req.frame_indices:
        inside = rect.contains(u.per_frame_landmarks[i].array(MOUTH_JAW_LANDMARKS), h, w)
        if not inside.all():
            uncovered.append(i)
    ok2 = frac >= min_mask_fraction and not uncovered
    detail2 = f"mask covers {frac:.3f} of crop"
    if uncovered:
        detail2 += f"; mouth/jaw landmarks outside mask in frames {uncovered[:5]}"
    report.record(2, ok2, detail2)

    trace = tuple(crop_fn_trace)
    foreign = sorted(set(trace) - EYE_NOSE_LANDMARKS)
    ok3, detail3 = not foreign, "crop fitted on eye/nose landmarks only"
    if foreign:
        detail3 = f"crop depends on {foreign}"
    tmpl = dict(FACE_TEMPLATE if template is None else template)
    if ok3 and set(trace) <= set(tmpl):
        for i in req.frame_indices[:3]:
            t = u.per_frame_transform[i]
            lm_frame = u.per_frame_landmarks[i].transformed(invert_affine(t), space="frame")
            if not _perturbation_invariant(lm_frame, trace, tmpl):
                ok3, detail3 = False, f"crop transform of frame {i} moves with mouth/chin landmarks"
                break
    report.record(3, ok3, detail3)

    aliased = sorted(set(req.reference_indices) & set(req.frame_indices))
    context = [
        i for i, f in zip(req.reference_indices, req.reference_frames)
        if np.any(_outside(np.asarray(f), rect) != 0)
    ]
    ok4 = not aliased and not context
    detail4 = "references disjoint from targets and mouth-only"
    if aliased:
        detail4 = f"targets {aliased} used as references"
    elif context:
        detail4 = f"references {context} keep context pixels"
    report.record(4, ok4, detail4)
    return report
