"""View canonicalization: landmark-driven affine estimation, skew removal, bicubic warping."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import ALIGNMENT_LANDMARKS, CROP_SIZE, AffineTransform, LandmarkSet, check_image
from .errors import DegenerateConfigurationError, ValidationError

# Crop-space positions of the alignment landmarks in the 256x256 template.
FACE_TEMPLATE: Mapping[str, tuple[float, float]] = {
    "left_eye": (96.0, 128.0),
    "right_eye": (160.0, 128.0),
    "eye_midpoint": (128.0, 128.0),
    "nose_bridge_mid": (128.0, 160.0),
}


def estimate_affine(frame_pts, template_pts) -> AffineTransform:
    """Least-squares affine transform taking ``frame_pts`` onto ``template_pts``."""
    src = np.asarray(frame_pts, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(template_pts, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValidationError(f"point lists differ in length: {len(src)} vs {len(dst)}")
    if len(src) < 3:
        raise DegenerateConfigurationError(f"need at least 3 point pairs, got {len(src)}")
    spread = np.linalg.svd(src - src.mean(axis=0), compute_uv=False)
    if spread[0] == 0.0 or spread[1] <= 1e-10 * spread[0]:
        raise DegenerateConfigurationError("source points are collinear")
    design = np.hstack([src, np.ones((len(src), 1))])
    sol, *_ = np.linalg.lstsq(design, dst, rcond=None)
    return AffineTransform(sol.T)


def orthogonalize_procrustes(a: AffineTransform) -> AffineTransform:
    """Drop the skew of ``a``: nearest scale*rotation to its linear part, translation kept."""
    lin = a.linear
    if abs(np.linalg.det(lin)) <= 1e-12 * max(1.0, np.abs(lin).max() ** 2):
        raise DegenerateConfigurationError("linear part is singular")
    u, sv, vt = np.linalg.svd(lin)
    d = np.diag([1.0, np.sign(np.linalg.det(u @ vt))])
    rot = u @ d @ vt
    scale = sv.mean()
    return AffineTransform.from_parts(scale * rot, a.translation)


def invert_affine(t: AffineTransform) -> AffineTransform:
    lin = t.linear
    det = lin[0, 0] * lin[1, 1] - lin[0, 1] * lin[1, 0]
    if abs(det) <= 1e-12 * max(1.0, np.abs(lin).max() ** 2):
        raise DegenerateConfigurationError("cannot invert a singular affine transform")
    inv = np.array([[lin[1, 1], -lin[0, 1]], [-lin[1, 0], lin[0, 0]]]) / det
    return AffineTransform.from_parts(inv, -inv @ t.translation)


def _catmull_rom(d: np.ndarray) -> np.ndarray:
    """Keys cubic kernel with a = -0.5."""
    a = -0.5
    d = np.abs(d)
    d2, d3 = d * d, d * d * d
    near = (a + 2) * d3 - (a + 3) * d2 + 1
    far = a * d3 - 5 * a * d2 + 8 * a * d - 4 * a
    return np.where(d <= 1, near, np.where(d < 2, far, 0.0))


def sample_bicubic(src: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``src`` at real coordinates with clamp-to-edge. Pixel centres sit on integers."""
    h, w = src.shape[:2]
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    offs = np.arange(-1, 3)
    wx = _catmull_rom((xs - x0)[..., None] - offs)  # (..., 4)
    wy = _catmull_rom((ys - y0)[..., None] - offs)
    cols = np.clip(x0.astype(np.int64)[..., None] + offs, 0, w - 1)
    rows = np.clip(y0.astype(np.int64)[..., None] + offs, 0, h - 1)
    flat = src.reshape(h * w, -1)
    idx = rows[..., :, None] * w + cols[..., None, :]  # (..., 4, 4)
    weights = wy[..., :, None] * wx[..., None, :]
    out = np.einsum("...ij,...ijc->...c", weights, flat[idx], optimize=True)
    return out if src.ndim == 3 else out[..., 0]


def warp_bicubic(src, t: AffineTransform, out_h: int, out_w: int, *, region=None) -> np.ndarray:
    """Resample ``src`` so that output pixel ``(x, y)`` reads ``src`` at ``t^-1 (x, y)``.

    ``region=(row0, row1, col0, col1)`` restricts sampling to that window of
    the output; pixels outside it are left at zero.
    """
    src = check_image(src, name="src")
    inv = invert_affine(t)
    if region is None and np.array_equal(t.matrix, np.eye(2, 3)) and src.shape[:2] == (out_h, out_w):
        return src.copy()
    r0, r1, c0, c1 = (0, out_h, 0, out_w) if region is None else region
    out = np.zeros((out_h, out_w) + src.shape[2:])
    if r0 >= r1 or c0 >= c1:
        return out
    ys, xs = np.mgrid[r0:r1, c0:c1].astype(np.float64)
    m = inv.matrix
    sx = m[0, 0] * xs + m[0, 1] * ys + m[0, 2]
    sy = m[1, 0] * xs + m[1, 1] * ys + m[1, 2]
    # Snap sampling positions that land on the lattice up to rounding noise.
    rx, ry = np.rint(sx), np.rint(sy)
    sx = np.where(np.abs(sx - rx) < 1e-9, rx, sx)
    sy = np.where(np.abs(sy - ry) < 1e-9, ry, sy)
    out[r0:r1, c0:c1] = np.clip(sample_bicubic(src, sx, sy), 0.0, 1.0)
    return out


def gaussian_taps(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3.0 * sigma))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    return np.exp(-0.5 * (k / sigma) ** 2) / (np.sqrt(2.0 * np.pi) * sigma)


def smooth_trajectory(values: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian-smooth ``values`` along axis 0; taps falling off either end are dropped and the rest renormalized."""
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    taps = gaussian_taps(sigma)
    radius = len(taps) // 2
    out = np.empty_like(values)
    for i in range(n):
        lo, hi = max(0, i - radius), min(n, i + radius + 1)
        w = taps[lo - i + radius : hi - i + radius]
        out[i] = np.tensordot(w, values[lo:hi], axes=(0, 0)) / w.sum()
    return out


def smooth_landmarks(tracks: Sequence[LandmarkSet], sigma: float = 1.0) -> list[LandmarkSet]:
    if len(tracks) == 0:
        raise ValidationError("cannot smooth an empty landmark sequence")
    names = tracks[0].names()
    for i, lm in enumerate(tracks):
        if set(lm.names()) != set(names):
            raise ValidationError(f"frame {i} landmark names differ from frame 0")
    stacked = np.stack([lm.array(names) for lm in tracks])  # (T, n, 2)
    smoothed = smooth_trajectory(stacked, sigma)
    return [LandmarkSet(dict(zip(names, map(tuple, s))), lm.space) for s, lm in zip(smoothed, tracks)]


def crop_transform(
    lm: LandmarkSet,
    names: Sequence[str] = ALIGNMENT_LANDMARKS,
    template: Mapping[str, tuple[float, float]] | None = None,
) -> AffineTransform:
    """Frame->crop Procrustes transform fitted on ``names`` only.

    ``names`` defaults to the eye/nose alignment set; passing other names is a
    test hook for demonstrating crop jitter leaks.
    """
    template = dict(FACE_TEMPLATE if template is None else template)
    lm.require(names)
    missing = [n for n in names if n not in template]
    if missing:
        raise ValidationError(f"no template coordinates for {missing}")
    affine = estimate_affine(lm.array(names), np.array([template[n] for n in names]))
    return orthogonalize_procrustes(affine)


@dataclass(frozen=True, eq=False)
class CropResult:
    image: np.ndarray
    transform: AffineTransform
    landmarks: LandmarkSet
    trace: tuple[str, ...]

    def __iter__(self):
        return iter((self.image, self.transform, self.landmarks))


def canonicalize_crop(
    frame,
    lm: LandmarkSet,
    size: int = CROP_SIZE,
    names: Sequence[str] = ALIGNMENT_LANDMARKS,
    template: Mapping[str, tuple[float, float]] | None = None,
) -> CropResult:
    """Warp ``frame`` into the canonical face crop.

    Unpacks as ``(image, transform, crop_landmarks)``; ``trace`` records which
    landmarks determined the transform.
    """
    if template is None and size != CROP_SIZE:
        template = {k: (x * size / CROP_SIZE, y * size / CROP_SIZE) for k, (x, y) in FACE_TEMPLATE.items()}
    t = crop_transform(lm, names, template)
    crop = warp_bicubic(frame, t, size, size)
    return CropResult(crop, t, lm.transformed(t, space="crop"), tuple(names))
