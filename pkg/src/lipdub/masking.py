"""Rectangular leak masks, the polygonal face mask, and feathered rasterization."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.special import ndtr

from .core import LandmarkSet
from .errors import ValidationError

DEFAULT_RECT = (0.08, 0.28, 0.92, 0.95)
LOSS_CHIN_SHIFT = 12.0
RENDER_CHIN_SHIFT = 8.0
FEATHER_SIGMA = 3.0
# Gaussian support radius in units of sigma; 4 keeps a straight-edge profile within 1e-3 of the erf.
FEATHER_TRUNCATE = 4.0


@dataclass(frozen=True)
class RectMask:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) and 0.0 <= v <= 1.0 for v in vals):
            raise ValidationError(f"mask coordinates must lie in [0, 1]: {vals}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValidationError(f"mask needs x1 < x2 and y1 < y2: {vals}")

    @classmethod
    def default(cls) -> "RectMask":
        return cls(*DEFAULT_RECT)

    def pixel_bounds(self, h: int, w: int) -> tuple[int, int, int, int]:
        """``(col0, row0, col1, row1)`` half-open; mins floor and maxes ceil so the mask never undershoots."""
        return (
            math.floor(self.x1 * w),
            math.floor(self.y1 * h),
            math.ceil(self.x2 * w),
            math.ceil(self.y2 * h),
        )

    def region(self, h: int, w: int) -> tuple[slice, slice]:
        c0, r0, c1, r1 = self.pixel_bounds(h, w)
        return slice(r0, r1), slice(c0, c1)

    def area_fraction(self, h: int, w: int) -> float:
        c0, r0, c1, r1 = self.pixel_bounds(h, w)
        return (c1 - c0) * (r1 - r0) / float(h * w)

    def contains(self, pts, h: int, w: int) -> np.ndarray:
        """Whether crop-space points fall in a masked pixel (pixel centres on integers)."""
        c0, r0, c1, r1 = self.pixel_bounds(h, w)
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        x, y = pts[:, 0], pts[:, 1]
        return (x >= c0 - 0.5) & (x < c1 - 0.5) & (y >= r0 - 0.5) & (y < r1 - 0.5)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


def apply_rect_mask(frame, m: RectMask) -> np.ndarray:
    """Zero the mask rectangle; every other pixel is copied unchanged."""
    out = np.array(frame, dtype=np.float64, copy=True)
    out[m.region(*out.shape[:2])] = 0.0
    return out


def apply_reference_mask(frame, m: RectMask) -> np.ndarray:
    """Keep only the mask rectangle (the mouth region) and zero the rest."""
    src = np.asarray(frame, dtype=np.float64)
    out = np.zeros_like(src)
    region = m.region(*src.shape[:2])
    out[region] = src[region]
    return out


def convex_hull(points) -> np.ndarray:
    """Counter-clockwise (in image coordinates, y down) hull by Andrew's monotone chain; collinear points dropped."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=np.float64).reshape(-1, 2))))
    if len(pts) < 3:
        return np.array(pts, dtype=np.float64).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.float64)


def polygon_area(vertices) -> float:
    v = np.asarray(vertices, dtype=np.float64)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True, eq=False)
class PolyMask:
    vertices: np.ndarray
    chin_shift: float = 0.0

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 2)
        if len(v) < 3:
            raise ValidationError("degenerate_polygon: fewer than 3 vertices")
        hull = convex_hull(v)
        if len(hull) != len(v) or abs(polygon_area(v)) <= 1e-9:
            raise ValidationError("degenerate_polygon: vertices do not form a convex polygon")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    def transformed(self, t) -> "PolyMask":
        return PolyMask(convex_hull(t.apply(self.vertices)), self.chin_shift)

    def contains(self, pts) -> np.ndarray:
        """Closed point-in-polygon test for a convex polygon."""
        pts = np.asarray(pts, dtype=np.float64)
        v = self.vertices
        sign = 1.0 if polygon_area(v) > 0 else -1.0
        inside = np.ones(pts.shape[:-1], dtype=bool)
        for a, b in zip(v, np.roll(v, -1, axis=0)):
            cr = (b[0] - a[0]) * (pts[..., 1] - a[1]) - (b[1] - a[1]) * (pts[..., 0] - a[0])
            inside &= sign * cr >= -1e-9
        return inside


def face_polygon_points(lm: LandmarkSet, chin_shift: float) -> np.ndarray:
    lm.require(("left_ear", "right_ear", "nose_bridge_mid", "nose_tip", "chin_left", "chin_center", "chin_right"))
    nose_mid = (np.asarray(lm["nose_bridge_mid"]) + np.asarray(lm["nose_tip"])) / 2.0
    pts = [lm["left_ear"], lm["right_ear"], nose_mid, lm["nose_tip"]]
    for name in ("chin_left", "chin_center", "chin_right"):
        x, y = lm[name]
        pts.append((x, y + chin_shift))
    return np.array(pts, dtype=np.float64)


def build_face_polygon(lm: LandmarkSet, chin_shift: float = LOSS_CHIN_SHIFT) -> PolyMask:
    """Convex hull of ears, mid-nose, nose tip and the three chin points moved down by ``chin_shift``."""
    hull = convex_hull(face_polygon_points(lm, chin_shift))
    if len(hull) < 3 or abs(polygon_area(hull)) <= 1e-9:
        raise ValidationError("degenerate_polygon: face landmarks are collinear")
    return PolyMask(hull, chin_shift)


def gaussian_disk_kernel(sigma: float, truncate: float = FEATHER_TRUNCATE) -> np.ndarray:
    """Normalized 2-D Gaussian restricted to a disc of radius ``truncate * sigma``.

    Taps are the Gaussian integrated over each pixel cell rather than point
    samples, so blurring a straight edge reproduces the continuous CDF.
    """
    radius = int(math.floor(truncate * sigma))
    i = np.arange(-radius, radius + 1, dtype=np.float64)
    w = ndtr((i + 0.5) / sigma) - ndtr((i - 0.5) / sigma)
    k = np.outer(w, w)
    yy, xx = np.meshgrid(i, i, indexing="ij")
    k[xx * xx + yy * yy > (truncate * sigma) ** 2] = 0.0
    return k / k.sum()


def rasterize(poly: PolyMask, h: int, w: int) -> np.ndarray:
    """Binary fill sampled at pixel centres."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return poly.contains(np.stack([xs, ys], axis=-1)).astype(np.float64)


def rasterize_feathered(poly: PolyMask, h: int, w: int, blur_sigma: float = FEATHER_SIGMA) -> np.ndarray:
    """Polygon fill convolved with a normalized Gaussian; exactly 0 beyond ``FEATHER_TRUNCATE * sigma`` of the fill."""
    if blur_sigma < 0:
        raise ValidationError(f"blur_sigma must be >= 0, got {blur_sigma}")
    if blur_sigma == 0:
        return rasterize(poly, h, w)
    kernel = gaussian_disk_kernel(blur_sigma)
    r = kernel.shape[0] // 2
    # Work on the polygon bounding box plus the kernel radius; the fill outside the image is kept.
    x0 = int(math.floor(poly.vertices[:, 0].min())) - 2 * r - 1
    x1 = int(math.ceil(poly.vertices[:, 0].max())) + 2 * r + 2
    y0 = int(math.floor(poly.vertices[:, 1].min())) - 2 * r - 1
    y1 = int(math.ceil(poly.vertices[:, 1].max())) + 2 * r + 2
    cx0, cx1 = max(x0, -r), min(x1, w + r)
    cy0, cy1 = max(y0, -r), min(y1, h + r)
    out = np.zeros((h, w))
    if cx0 >= cx1 or cy0 >= cy1:
        return out
    ys, xs = np.mgrid[cy0:cy1, cx0:cx1].astype(np.float64)
    fill = poly.contains(np.stack([xs, ys], axis=-1)).astype(np.float64)
    blurred = signal.fftconvolve(fill, kernel, mode="same")
    # FFT round-off leaves ~1e-17 noise where the exact convolution is 0 or 1.
    blurred[blurred < 1e-12] = 0.0
    blurred[blurred > 1.0 - 1e-12] = 1.0
    oy0, ox0 = max(cy0, 0), max(cx0, 0)
    oy1, ox1 = min(cy1, h), min(cx1, w)
    if oy0 < oy1 and ox0 < ox1:
        out[oy0:oy1, ox0:ox1] = blurred[oy0 - cy0 : oy1 - cy0, ox0 - cx0 : ox1 - cx0]
    return np.clip(out, 0.0, 1.0)
