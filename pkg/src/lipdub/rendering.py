"""Blend synthesized crops back into the full-resolution frames."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from .core import AffineTransform, LandmarkSet, UtteranceChunk, check_image
from .errors import ValidationError
from .geometry import invert_affine, warp_bicubic
from .masking import FEATHER_SIGMA, RENDER_CHIN_SHIFT, build_face_polygon, rasterize, rasterize_feathered


def render_mask(full_shape, t: AffineTransform, lm: LandmarkSet, feather_sigma: float, chin_shift: float) -> np.ndarray:
    """Feathered face mask in frame space: the crop-space polygon mapped through ``t^-1``."""
    poly = build_face_polygon(lm, chin_shift).transformed(invert_affine(t))
    return rasterize_feathered(poly, full_shape[0], full_shape[1], feather_sigma)


def paste_back(
    full_frame,
    crop,
    t: AffineTransform,
    lm: LandmarkSet,
    feather_sigma: float = FEATHER_SIGMA,
    *,
    chin_shift: float = RENDER_CHIN_SHIFT,
    literal_blend: bool = False,
) -> np.ndarray:
    """Alpha-blend ``crop`` (resampled by ``t^-1``) into ``full_frame`` under the feathered face mask.

    The default is the convex blend ``m * crop + (1 - m) * frame`` with ``m``
    the blurred face mask, so pixels with ``m == 0`` are copied bit-exactly.
    ``literal_blend`` instead evaluates ``(1 - blur(b)) * crop + b * frame``
    with ``b`` the binary background mask, whose weights do not sum to one in
    the feathered band.
    """
    frame = check_image(full_frame, name="full_frame")
    crop = check_image(crop, name="crop")
    h, w = frame.shape[:2]
    if crop.ndim != frame.ndim or crop.shape[2:] != frame.shape[2:]:
        raise ValidationError(f"crop channels {crop.shape} do not match frame {frame.shape}")
    if literal_blend:
        restored = warp_bicubic(crop, invert_affine(t), h, w)
        poly = build_face_polygon(lm, chin_shift).transformed(invert_affine(t))
        background = 1.0 - rasterize(poly, h, w)
        blurred = 1.0 - rasterize_feathered(poly, h, w, feather_sigma)
        a = (1.0 - blurred)[..., None] if frame.ndim == 3 else 1.0 - blurred
        b = background[..., None] if frame.ndim == 3 else background
        return np.clip(a * restored + b * frame, 0.0, 1.0)
    m = render_mask((h, w), t, lm, feather_sigma, chin_shift)
    out = frame.copy()
    rows, cols = np.nonzero(m)
    if rows.size == 0:
        return out
    box = (rows.min(), rows.max() + 1, cols.min(), cols.max() + 1)
    restored = warp_bicubic(crop, invert_affine(t), h, w, region=box)
    mm = m[..., None] if frame.ndim == 3 else m
    blended = np.clip(mm * restored + (1.0 - mm) * frame, 0.0, 1.0)
    touched = m > 0
    out[touched] = blended[touched]
    return out


def render_video(
    frames: Sequence,
    chunks: Sequence[tuple[UtteranceChunk, Sequence]],
    transforms: Sequence[AffineTransform],
    landmarks: Sequence[LandmarkSet],
    feather_sigma: float = FEATHER_SIGMA,
    *,
    chin_shift: float = RENDER_CHIN_SHIFT,
    jobs: int = 1,
) -> list:
    """Replace every chunk's core frames by pasting back its synthesized crops.

    Each chunk comes with one crop per frame of its span (buffers included);
    buffer crops are discarded. ``transforms``/``landmarks`` are per track frame.
    """
    out = list(frames)
    covered = np.zeros(len(frames), dtype=bool)
    work = []
    for chunk, crops in chunks:
        lo, hi = chunk.span
        if len(crops) != hi - lo:
            raise ValidationError(f"chunk {chunk.core_range} needs {hi - lo} crops (span incl. buffers), got {len(crops)}")
        s, e = chunk.core_range
        if e > len(frames):
            raise ValidationError(f"chunk {chunk.core_range} runs past the track ({len(frames)} frames)")
        if covered[s:e].any():
            raise ValidationError(f"chunk {chunk.core_range} overlaps another chunk's core range")
        covered[s:e] = True
        work.extend((f, crops[f - lo]) for f in range(s, e))

    def paste(item):
        f, crop = item
        return paste_back(frames[f], crop, transforms[f], landmarks[f], feather_sigma, chin_shift=chin_shift)

    if jobs > 1 and len(work) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            pasted = list(pool.map(paste, work))
    else:
        pasted = [paste(item) for item in work]
    for (f, _), img in zip(work, pasted):
        out[f] = img
    return out
