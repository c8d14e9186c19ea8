"""Reference-frame selection.

K-means over per-frame landmark/pose features picks one representative frame
per cluster; ``first``, ``uniform`` and ``random`` are the ablation baselines.
Every strategy excludes the target frame(s).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import CROP_SIZE, MOUTH_JAW_LANDMARKS, LandmarkSet
from .errors import ValidationError

DEFAULT_K = 10
MAX_ITER = 100
TOL = 1e-6
N_INIT = 10
STRATEGIES = ("first", "random", "uniform", "kmeans")


def _exclusion_set(exclude) -> frozenset:
    if exclude is None:
        return frozenset()
    if isinstance(exclude, (int, np.integer)):
        return frozenset([int(exclude)])
    return frozenset(int(e) for e in exclude)


@dataclass(frozen=True)
class RefSelection:
    indices: tuple[int, ...]
    strategy: str
    excluded: frozenset
    k: int
    seed: int | None = None

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "excluded", _exclusion_set(self.excluded))
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        if list(idx) != sorted(set(idx)):
            raise ValidationError("reference indices must be unique and sorted")
        if self.excluded & set(idx):
            raise ValidationError(f"reference selection contains excluded frame(s) {sorted(self.excluded & set(idx))}")
        if len(idx) > self.k:
            raise ValidationError(f"{len(idx)} references exceed requested k={self.k}")

    @property
    def excluded_target(self):
        """The single excluded frame, when exactly one was given."""
        return next(iter(self.excluded)) if len(self.excluded) == 1 else None

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


def head_roll(lm: LandmarkSet) -> float:
    (x1, y1), (x2, y2) = lm["left_eye"], lm["right_eye"]
    return math.atan2(y2 - y1, x2 - x1)


def frame_features(lm: LandmarkSet, crop_size: int = CROP_SIZE) -> np.ndarray:
    """13 mouth/jaw points scaled to [0, 1] by the crop size, then head roll in radians (27 values)."""
    mouth = lm.array(MOUTH_JAW_LANDMARKS).reshape(-1) / float(crop_size)
    return np.concatenate([mouth, [head_roll(lm)]])


@dataclass(frozen=True, eq=False)
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    wcss: float
    n_iter: int


def wcss(x: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    return float(np.sum((x - centers[labels]) ** 2))


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int, tol: float) -> KMeansResult:
    k = len(centers)
    prev = math.inf
    labels = np.zeros(len(x), dtype=np.int64)
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, centers)
        labels = d.argmin(axis=1)
        new = centers.copy()
        for j in range(k):
            members = x[labels == j]
            if len(members):
                new[j] = members.mean(axis=0)
            else:
                # Empty cluster: move it onto the point farthest from its current centre.
                far = int(d[np.arange(len(x)), labels].argmax())
                new[j] = x[far]
                labels[far] = j
        centers = new
        cur = wcss(x, labels, centers)
        if prev - cur <= tol * max(cur, 1e-300) and it > 1:
            break
        prev = cur
    labels = _sq_dists(x, centers).argmin(axis=1)
    labels, centers = _transfer_refine(x, labels, k, max_iter)
    return KMeansResult(centers, labels, wcss(x, labels, centers), it)


def _transfer_refine(x: np.ndarray, labels: np.ndarray, k: int, max_pass: int) -> tuple[np.ndarray, np.ndarray]:
    """Single-point transfers (Hartigan's criterion) until no move lowers the WCSS.

    Lloyd stops at partitions where moving one point would still help because
    its own centroid shifts with it; this pass removes those local minima.
    """
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    for _ in range(max_pass):
        moved = False
        for i in range(len(x)):
            a = labels[i]
            if counts[a] <= 1:
                continue
            occupied = counts > 0
            cents = sums / np.where(occupied, counts, 1.0)[:, None]
            d = ((cents - x[i]) ** 2).sum(axis=1)
            gain = np.where(occupied, counts / (counts + 1.0) * d, np.inf)
            loss = counts[a] / (counts[a] - 1.0) * d[a]
            gain[a] = np.inf
            b = int(gain.argmin())
            if gain[b] < loss * (1.0 - 1e-12):
                labels[i] = b
                counts[a] -= 1
                counts[b] += 1
                sums[a] -= x[i]
                sums[b] += x[i]
                moved = True
        if not moved:
            break
    centers = np.array([sums[j] / counts[j] if counts[j] else x[0] for j in range(k)])
    # Report the objective of the final partition with its own centroids.
    for j in range(k):
        if counts[j]:
            centers[j] = x[labels == j].mean(axis=0)
    return labels, centers


def kmeans(x, k: int, seed: int = 0, *, n_init: int = N_INIT, max_iter: int = MAX_ITER, tol: float = TOL) -> KMeansResult:
    """Lloyd's algorithm plus transfer refinement from ``n_init`` k-means++ seedings; the lowest-WCSS run wins (first on ties)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValidationError("kmeans needs a non-empty 2-D feature array")
    if not (1 <= k <= len(x)):
        raise ValidationError(f"k={k} must lie in [1, {len(x)}]")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        res = _lloyd(x, _kmeans_pp(x, k, rng), max_iter, tol)
        if best is None or res.wcss < best.wcss:
            best = res
    return best


def _candidates(n_frames: int, exclude) -> list[int]:
    ex = _exclusion_set(exclude)
    return [i for i in range(n_frames) if i not in ex]


def select_references_kmeans(features: Sequence, k: int = DEFAULT_K, seed: int = 0, exclude=None) -> RefSelection:
    """Cluster the non-excluded frames and return, per cluster, the member nearest its centroid."""
    feats = np.asarray(features, dtype=np.float64)
    if k < 1:
        raise ValidationError("k must be >= 1")
    cand = _candidates(len(feats), exclude)
    if not cand:
        raise ValidationError("no candidate frames left after exclusion")
    ex = _exclusion_set(exclude)
    if len(cand) <= k:
        return RefSelection(tuple(cand), "kmeans", ex, k, seed)
    x = feats[cand]
    res = kmeans(x, k, seed)
    picked = []
    d = _sq_dists(x, res.centers)
    for j in range(k):
        members = np.flatnonzero(res.labels == j)
        if len(members):
            picked.append(cand[int(members[d[members, j].argmin()])])
    return RefSelection(tuple(sorted(picked)), "kmeans", ex, k, seed)


def select_references_baseline(n_frames: int, k: int = DEFAULT_K, strategy: str = "first", exclude=None, seed: int = 0) -> RefSelection:
    if n_frames < 2:
        raise ValidationError("need at least 2 frames")
    ex = _exclusion_set(exclude)
    cand = _candidates(n_frames, ex)
    k_eff = max(0, min(k, len(cand)))
    if strategy == "first":
        idx = cand[:k_eff]
    elif strategy == "uniform":
        step = len(cand) / k_eff if k_eff else 0
        idx = [cand[int(math.floor((i + 0.5) * step))] for i in range(k_eff)]
    elif strategy == "random":
        rng = np.random.default_rng(seed)
        idx = sorted(int(i) for i in rng.choice(cand, size=k_eff, replace=False)) if k_eff else []
    else:
        raise ValidationError(f"unknown baseline strategy {strategy!r}")
    return RefSelection(tuple(idx), strategy, ex, k, seed if strategy == "random" else None)


def select_references(
    landmarks: Sequence[LandmarkSet],
    k: int = DEFAULT_K,
    strategy: str = "kmeans",
    seed: int = 0,
    exclude=None,
) -> RefSelection:
    if strategy == "kmeans":
        return select_references_kmeans([frame_features(lm) for lm in landmarks], k, seed, exclude)
    return select_references_baseline(len(landmarks), k, strategy, exclude, seed)


def mean_pairwise_distance(features: Iterable) -> float:
    f = np.asarray(list(features), dtype=np.float64)
    if len(f) < 2:
        return 0.0
    d = np.sqrt(_sq_dists(f, f))
    n = len(f)
    return float(d.sum() / (n * (n - 1)))
