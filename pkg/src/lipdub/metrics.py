"""Training objectives and evaluation metrics.

Differentiable terms (L1, SSIM, MS-SSIM, the reconstruction mix, landmark L2)
return an analytic gradient with respect to their first argument when called
with ``return_grad=True``. Images may be ``(H, W)`` or ``(H, W, C)``; colour
inputs are scored per channel and averaged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ValidationError

WIN_SIZE = 11
WIN_SIGMA = 1.5
K1, K2 = 0.01, 0.03
DATA_RANGE = 1.0
C1 = (K1 * DATA_RANGE) ** 2
C2 = (K2 * DATA_RANGE) ** 2
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
BCE_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha_rec: float = 1.0
    alpha_land: float = 100.0
    alpha_gan: float = 1e-4
    alpha_mix: float = 0.86

    def __post_init__(self):
        for name in ("alpha_rec", "alpha_land", "alpha_gan", "alpha_mix"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")
        if self.alpha_mix > 1:
            raise ValidationError(f"alpha_mix must lie in [0, 1], got {self.alpha_mix}")

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(self.alpha_rec * factor, self.alpha_land * factor, self.alpha_gan * factor, self.alpha_mix)


def gaussian_window(size: int = WIN_SIZE, sigma: float = WIN_SIGMA) -> np.ndarray:
    k = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (k / sigma) ** 2)
    return g / g.sum()


_G = gaussian_window()


def _filter(x: np.ndarray) -> np.ndarray:
    """Valid-mode separable Gaussian filtering."""
    x = sliding_window_view(x, WIN_SIZE, axis=0) @ _G
    return sliding_window_view(x, WIN_SIZE, axis=1) @ _G


def _filter_adjoint(y: np.ndarray) -> np.ndarray:
    p = WIN_SIZE - 1
    return _filter(np.pad(y, p))


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValidationError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if x.ndim != 3:
        raise ValidationError(f"expected HxW or HxWxC images, got shape {x.shape}")
    return x, y


class _Stats(NamedTuple):
    mu_x: np.ndarray
    mu_y: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray


def _local_stats(x: np.ndarray, y: np.ndarray) -> _Stats:
    if min(x.shape) < WIN_SIZE:
        raise ValidationError(f"image {x.shape} smaller than the {WIN_SIZE}x{WIN_SIZE} window")
    mu_x, mu_y = _filter(x), _filter(y)
    sxx = _filter(x * x) - mu_x * mu_x
    syy = _filter(y * y) - mu_y * mu_y
    sxy = _filter(x * y) - mu_x * mu_y
    return _Stats(
        mu_x,
        mu_y,
        2 * mu_x * mu_y + C1,
        2 * sxy + C2,
        mu_x * mu_x + mu_y * mu_y + C1,
        sxx + syy + C2,
    )


def _ssim_gray(x, y, want_grad):
    s = _local_stats(x, y)
    smap = (s.a1 * s.a2) / (s.b1 * s.b2)
    value = float(smap.mean())
    if not want_grad:
        return value, None
    n = smap.size
    denom = s.b1 * s.b2
    # Partial derivatives w.r.t. the local moments mu_x, E[x^2], E[xy].
    d_mu = (2 * s.mu_y * (s.a2 - s.a1)) / denom - smap * 2 * s.mu_x * (1 / s.b1 - 1 / s.b2)
    d_exx = -smap / s.b2
    d_exy = 2 * s.a1 / denom
    grad = (_filter_adjoint(d_mu) + 2 * x * _filter_adjoint(d_exx) + y * _filter_adjoint(d_exy)) / n
    return value, grad


def _cs_gray(x, y, want_grad):
    s = _local_stats(x, y)
    csmap = s.a2 / s.b2
    value = float(csmap.mean())
    if not want_grad:
        return value, None
    n = csmap.size
    d_mu = -2 * s.mu_y / s.b2 + csmap * 2 * s.mu_x / s.b2
    d_exx = -csmap / s.b2
    d_exy = 2 / s.b2
    grad = (_filter_adjoint(d_mu) + 2 * x * _filter_adjoint(d_exx) + y * _filter_adjoint(d_exy)) / n
    return value, grad


def _per_channel(fn, x, y, return_grad):
    x3, y3 = _pair(x, y)
    c = x3.shape[2]
    vals, grads = [], []
    for ch in range(c):
        v, g = fn(x3[..., ch], y3[..., ch], return_grad)
        vals.append(v)
        grads.append(g)
    value = float(np.mean(vals))
    if not return_grad:
        return value
    grad = np.stack(grads, axis=-1) / c
    return value, grad.reshape(np.shape(x))


def ssim(x, y, *, return_grad: bool = False):
    """Mean SSIM over valid 11x11 Gaussian (sigma 1.5) windows, unit dynamic range."""
    return _per_channel(_ssim_gray, x, y, return_grad)


def _pool2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def _unpool2(g: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape)
    up = 0.25 * np.repeat(np.repeat(g, 2, axis=0), 2, axis=1)
    out[: up.shape[0], : up.shape[1]] = up
    return out


def max_ms_ssim_levels(h: int, w: int) -> int:
    m = min(h, w)
    return int(math.floor(math.log2(m / WIN_SIZE))) + 1 if m >= WIN_SIZE else 0


def _ms_ssim_gray(x, y, levels, want_grad):
    weights = np.array(MS_SSIM_WEIGHTS[:levels])
    weights = weights / weights.sum()
    xs, ys = [x], [y]
    for _ in range(levels - 1):
        xs.append(_pool2(xs[-1]))
        ys.append(_pool2(ys[-1]))
    terms, grads = [], []
    for j in range(levels):
        fn = _ssim_gray if j == levels - 1 else _cs_gray
        v, g = fn(xs[j], ys[j], want_grad)
        terms.append(v)
        grads.append(g)
    terms = np.array(terms)
    if np.any(terms <= 0):
        # Negative contrast-structure terms have no real fractional power; clamp to zero like common implementations.
        return 0.0, (np.zeros_like(x) if want_grad else None)
    value = float(np.prod(terms ** weights))
    if not want_grad:
        return value, None
    acc = np.zeros_like(xs[-1])
    for j in range(levels - 1, -1, -1):
        acc = acc + value * weights[j] / terms[j] * grads[j]
        if j > 0:
            acc = _unpool2(acc, xs[j - 1].shape)
    return value, acc


def ms_ssim(x, y, levels: int = 5, *, return_grad: bool = False):
    """Multi-scale SSIM: contrast-structure at each of ``levels - 1`` scales times full SSIM at the coarsest.

    Scales are produced by 2x2 average pooling; the conventional five level
    exponents are renormalized when fewer levels are requested, so
    ``levels=1`` is plain SSIM.
    """
    if not (1 <= levels <= len(MS_SSIM_WEIGHTS)):
        raise ValidationError(f"levels must lie in [1, {len(MS_SSIM_WEIGHTS)}]")
    h, w = np.shape(x)[:2]
    need = 2 ** (levels - 1) * WIN_SIZE
    if min(h, w) < need:
        raise ValidationError(
            f"{h}x{w} image too small for {levels} MS-SSIM levels (needs {need}); "
            f"max feasible levels is {max_ms_ssim_levels(h, w)}"
        )
    return _per_channel(lambda a, b, g: _ms_ssim_gray(a, b, levels, g), x, y, return_grad)


def l1_loss(x, y, *, return_grad: bool = False):
    x3, y3 = _pair(x, y)
    d = x3 - y3
    value = float(np.mean(np.abs(d)))
    if not return_grad:
        return value
    return value, (np.sign(d) / d.size).reshape(np.shape(x))


def rec_loss(x, y, w: LossWeights = LossWeights(), levels: int = 5, *, return_grad: bool = False):
    """``alpha * (1 - MS-SSIM) + (1 - alpha) * mean|x - y|`` with ``alpha = w.alpha_mix``."""
    a = w.alpha_mix
    if return_grad:
        ms, g_ms = ms_ssim(x, y, levels, return_grad=True)
        l1, g_l1 = l1_loss(x, y, return_grad=True)
        return a * (1.0 - ms) + (1.0 - a) * l1, -a * g_ms + (1.0 - a) * g_l1
    return a * (1.0 - ms_ssim(x, y, levels)) + (1.0 - a) * l1_loss(x, y)


def psnr(x, y) -> float:
    """10 log10(1 / MSE) for unit dynamic range; ``inf`` for identical images."""
    x3, y3 = _pair(x, y)
    mse = float(np.mean((x3 - y3) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(DATA_RANGE**2 / mse)


def landmark_loss(pred, target, *, printed_form: bool = False, return_grad: bool = False):
    """Squared L2 over all 13x2 landmark coordinates.

    ``printed_form=True`` squares ``(dx + dy)`` per landmark instead.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 2 or p.shape[1] != 2:
        raise ValidationError(f"landmark arrays must share an (n, 2) shape, got {p.shape} and {t.shape}")
    d = p - t
    if printed_form:
        s = d.sum(axis=1)
        value = float(np.sum(s * s))
        grad = np.repeat(2 * s[:, None], 2, axis=1)
    else:
        value = float(np.sum(d * d))
        grad = 2 * d
    return (value, grad) if return_grad else value


def _scores(v, name) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise ValidationError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} has non-finite scores")
    return a


def hinge_d_loss(d_real, d_fake) -> float:
    r = _scores(d_real, "d_real")
    f = _scores(d_fake, "d_fake")
    return float(np.mean(np.maximum(0.0, 1.0 - r)) + np.mean(np.maximum(0.0, 1.0 + f)))


def hinge_g_loss(d_fake) -> float:
    return float(np.mean(_scores(d_fake, "d_fake")))


def hinge_gan_loss(d_real, d_fake) -> float:
    """``L_D - L_G``."""
    return hinge_d_loss(d_real, d_fake) - hinge_g_loss(d_fake)


class LogGanLosses(NamedTuple):
    l_x: float
    l_xa: float
    clamped: bool


def _log_form(real, fake) -> tuple[float, bool]:
    r = _scores(real, "real probabilities")
    f = _scores(fake, "fake probabilities")
    clamped = bool(np.any((r <= BCE_EPS) | (r >= 1 - BCE_EPS) | (f <= BCE_EPS) | (f >= 1 - BCE_EPS)))
    r = np.clip(r, BCE_EPS, 1 - BCE_EPS)
    f = np.clip(f, BCE_EPS, 1 - BCE_EPS)
    return float(np.mean(np.log(r)) + np.mean(np.log1p(-f))), clamped


def bce_gan_losses(dx_real, dx_fake, dxa_real, dxa_fake) -> LogGanLosses:
    """Log-form objectives of the image discriminator and the video-audio discriminator."""
    l_x, c1 = _log_form(dx_real, dx_fake)
    l_xa, c2 = _log_form(dxa_real, dxa_fake)
    return LogGanLosses(l_x, l_xa, c1 or c2)


def logistic(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def attention_weights(audio_key, ref_embeddings, *, flip_sign: bool = False):
    """Soft attention over references: ``w_n ∝ exp(-logistic(A·R_n))``.

    Returns ``(weights, blended)`` with ``blended = Σ w_n R_n``. The negative
    exponent favours references *less* similar to the audio key;
    ``flip_sign=True`` uses ``exp(+logistic(...))`` instead.
    """
    key = np.asarray(audio_key, dtype=np.float64).reshape(-1)
    refs = np.asarray(ref_embeddings, dtype=np.float64)
    if refs.ndim != 2 or len(refs) == 0:
        raise ValidationError("need a non-empty list of reference embeddings")
    if refs.shape[1] != key.size:
        raise ValidationError(f"dimension mismatch: key {key.size} vs references {refs.shape[1]}")
    logits = logistic(refs @ key)
    logits = logits if flip_sign else -logits
    e = np.exp(logits - logits.max())
    w = e / e.sum()
    return w, w @ refs


@dataclass(frozen=True, eq=False)
class GaussianStats:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mean, dtype=np.float64).reshape(-1)
        cov = np.array(self.covariance, dtype=np.float64)
        if cov.shape != (mu.size, mu.size):
            raise ValidationError(f"covariance shape {cov.shape} does not match mean of length {mu.size}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))):
            raise ValidationError("statistics must be finite")
        scale = max(1.0, float(np.abs(cov).max(initial=0.0)))
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-9 * scale):
            raise ValidationError("covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        if mu.size and np.linalg.eigvalsh(cov).min() < -1e-9 * scale:
            raise ValidationError("covariance is not positive semi-definite")
        mu.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "covariance", cov)


def stats_from_embeddings(embs) -> GaussianStats:
    e = np.asarray(embs, dtype=np.float64)
    if e.ndim != 2 or len(e) < 2:
        raise ValidationError("need at least 2 embedding vectors")
    mu = e.mean(axis=0)
    d = e - mu
    cov = d.T @ d / (len(e) - 1)
    return GaussianStats(mu, 0.5 * (cov + cov.T))


def _psd_sqrt(m: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    scale = max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.size and vals.min() < -tol * scale:
        raise ValidationError(f"matrix not PSD (min eigenvalue {vals.min():.3g})")
    return np.sqrt(np.clip(vals, 0.0, None)), vecs


def frechet_distance(a: GaussianStats, b: GaussianStats, tol: float = 1e-6) -> float:
    """``|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`` via symmetric eigendecompositions."""
    if a.mean.shape != b.mean.shape:
        raise ValidationError(f"dimension mismatch: {a.mean.size} vs {b.mean.size}")
    root_vals, vecs = _psd_sqrt(a.covariance, tol)
    sqrt_a = (vecs * root_vals) @ vecs.T
    # tr (S_a S_b)^(1/2) == tr (S_a^(1/2) S_b S_a^(1/2))^(1/2), whose argument is symmetric PSD.
    mid_roots, _ = _psd_sqrt(sqrt_a @ b.covariance @ sqrt_a, tol)
    _psd_sqrt(b.covariance, tol)
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * mid_roots.sum())
    return max(value, 0.0)


def total_objective(rec: float, land: float, gan: float, w: LossWeights = LossWeights()) -> float:
    for name, v in (("rec", rec), ("land", land), ("gan", gan)):
        if not math.isfinite(v):
            raise ValidationError(f"{name} component is not finite")
    return w.alpha_rec * rec + w.alpha_land * land + w.alpha_gan * gan


def embed_frames(frames: Sequence, size: int = 8) -> np.ndarray:
    """Desk-scale frame embedding for Fréchet comparisons: ``size x size`` block-averaged luma, flattened."""
    from .core import to_gray

    out = []
    for f in frames:
        g = to_gray(f)
        h, w = g.shape
        bh, bw = h // size, w // size
        g = g[: bh * size, : bw * size].reshape(size, bh, size, bw).mean(axis=(1, 3))
        out.append(g.reshape(-1))
    return np.array(out)
