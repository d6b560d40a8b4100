"""Scalar and vector probability primitives.

Everything here is vectorized over numpy arrays and deterministic given its
inputs (samplers take an explicit ``numpy.random.Generator``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DecompositionError, DomainError, NumericError

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
PROB_CLAMP = 1e-15


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """PCG64 generator from a 64-bit seed or a spawned seed sequence."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def split_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Independent child streams, one per concurrent task."""
    return np.random.SeedSequence(int(seed)).spawn(n)


@dataclass(frozen=True)
class Gaussian1D:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DomainError(f"std must be positive, got {self.std}")

    def as_mixture(self) -> GaussianMixture1D:
        return GaussianMixture1D(np.array([1.0]), np.array([self.mean]), np.array([self.std]))


@dataclass(frozen=True)
class GaussianMixture1D:
    """Finite mixture of univariate Gaussians.

    Attributes
    ----------
    weights : ndarray, shape (K,)
        Mixing probabilities, nonnegative and summing to one.
    means, stds : ndarray, shape (K,)
        Component locations and scales.
    """

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        mu = np.atleast_1d(np.asarray(self.means, dtype=float))
        sd = np.atleast_1d(np.asarray(self.stds, dtype=float))
        if not (w.shape == mu.shape == sd.shape) or w.ndim != 1 or w.size == 0:
            raise DomainError("mixture needs matching 1-D weights/means/stds with >= 1 component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"mixture weights must be a probability vector, got {w}")
        if np.any(~(sd > 0)):
            raise DomainError("mixture stds must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "stds", sd)

    @classmethod
    def from_components(cls, weights, components) -> GaussianMixture1D:
        return cls(
            np.asarray(weights, dtype=float),
            np.array([c.mean for c in components]),
            np.array([c.std for c in components]),
        )

    @property
    def n_components(self) -> int:
        return self.weights.size

    def support(self, n_sigma: float = 12.0) -> tuple[float, float]:
        return (
            float(np.min(self.means - n_sigma * self.stds)),
            float(np.max(self.means + n_sigma * self.stds)),
        )

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        k = categorical_sample(self.weights, rng, size)
        return self.means[k] + self.stds[k] * rng.standard_normal(size)


# ---------------------------------------------------------------------------
# standard normal


def norm_logpdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - LOG_SQRT_2PI


def norm_pdf(x):
    return np.exp(norm_logpdf(x))


def norm_cdf(x):
    """Standard normal CDF; saturates to 0/1 in the extreme tails."""
    return special.ndtr(x)


def norm_logcdf(x):
    return special.log_ndtr(x)


def norm_quantile(p):
    """Inverse of :func:`norm_cdf` on the open unit interval."""
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError("norm_quantile requires 0 < p < 1")
    out = special.ndtri(p)
    return float(out) if out.ndim == 0 else out


def clamp_prob(p):
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


# ---------------------------------------------------------------------------
# Gaussian mixtures.  The array-level functions below broadcast ``x`` of shape
# (...) against component parameters of shape (K,) and are what the proposal
# uses on its hot path; the ``mixture_*`` wrappers take a GaussianMixture1D.


def logsumexp(a, axis=None, keepdims=False):
    """``log(sum(exp(a)))`` without the dispatch overhead of the scipy version.

    Slices that are entirely ``-inf`` give ``-inf``.
    """
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


def _mix_standardize(x, log_w, means, stds):
    x = np.asarray(x, dtype=float)[..., None]
    return (x - means) / stds, log_w


def mix_logpdf(x, log_w, means, stds):
    r, log_w = _mix_standardize(x, log_w, means, stds)
    return logsumexp(log_w + norm_logpdf(r) - np.log(stds), axis=-1)


def mix_logcdf(x, log_w, means, stds):
    r, log_w = _mix_standardize(x, log_w, means, stds)
    return logsumexp(log_w + special.log_ndtr(r), axis=-1)


def mix_logsf(x, log_w, means, stds):
    r, log_w = _mix_standardize(x, log_w, means, stds)
    return logsumexp(log_w + special.log_ndtr(-r), axis=-1)


def _log_weights(weights):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(weights, dtype=float))


def mixture_logpdf(x, m: GaussianMixture1D):
    out = mix_logpdf(x, _log_weights(m.weights), m.means, m.stds)
    return float(out) if np.ndim(out) == 0 else out


def mixture_cdf(x, m: GaussianMixture1D):
    out = np.exp(mix_logcdf(x, _log_weights(m.weights), m.means, m.stds))
    return float(out) if np.ndim(out) == 0 else out


def mix_quantile_from_normal(z, log_w, means, stds, *, max_iter=200):
    """Solve ``F(x) = Phi(z)`` for a Gaussian mixture ``F``.

    Working from the normal score ``z`` rather than from ``p = Phi(z)`` keeps
    full relative precision in both tails: for ``z > 0`` the survival-function
    equation is solved instead.  The root is bracketed by the per-component
    quantiles ``means + stds * z`` (the mixture CDF is a convex combination of
    the component CDFs), refined by safeguarded Newton steps on the log-tail
    equation, and polished to machine precision.
    """
    z = np.asarray(z, dtype=float)
    means = np.asarray(means, dtype=float)
    stds = np.asarray(stds, dtype=float)
    if means.size == 1:
        return means[0] + stds[0] * z

    comp_q = means + stds * z[..., None]
    lo = comp_q.min(axis=-1)
    hi = comp_q.max(axis=-1)
    upper = z > 0
    target = np.where(upper, special.log_ndtr(-z), special.log_ndtr(z))

    log_sd = np.log(stds)

    def resid(x):
        # increasing in x on both branches
        r = (x[..., None] - means) / stds
        lcdf = logsumexp(log_w + special.log_ndtr(r), axis=-1)
        lsf = logsumexp(log_w + special.log_ndtr(-r), axis=-1)
        lpdf = logsumexp(log_w + norm_logpdf(r) - log_sd, axis=-1)
        g = np.where(upper, target - lsf, lcdf - target)
        dg = np.where(upper, np.exp(lpdf - lsf), np.exp(lpdf - lcdf))
        return g, dg

    x = 0.5 * (lo + hi)
    for it in range(max_iter):
        g, dg = resid(x)
        lo = np.where(g < 0, x, lo)
        hi = np.where(g > 0, x, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(dg > 0, g / dg, np.inf)
        x_new = x - step
        bad = ~((x_new > lo) & (x_new < hi)) | ~np.isfinite(x_new)
        x_new = np.where(bad, 0.5 * (lo + hi), x_new)
        delta = np.abs(x_new - x)
        x = x_new
        scale = 1.0 + np.abs(x)
        if np.all((delta <= 2e-15 * scale) | (hi - lo <= 2e-15 * scale)):
            break
    else:
        worst = int(np.argmax(np.abs(resid(x)[0])))
        raise NumericError(
            f"mixture quantile did not converge in {max_iter} iterations "
            f"(worst residual at flat index {worst}, bracket width {np.max(hi - lo):.3e})"
        )
    return x


def mixture_quantile(p, m: GaussianMixture1D):
    """Inverse mixture CDF; ``p`` is clamped into ``[1e-15, 1 - 1e-15]``."""
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError("mixture_quantile requires 0 < p < 1")
    z = special.ndtri(clamp_prob(p))
    out = mix_quantile_from_normal(z, _log_weights(m.weights), m.means, m.stds)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# sampling and linear algebra


def categorical_sample(weights, rng: np.random.Generator, size=None):
    """Inverse-CDF categorical draws; weights are normalized internally."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or np.any(w < 0) or not np.all(np.isfinite(w)) or not w.sum() > 0:
        raise DomainError("categorical weights must be finite, nonnegative, with positive sum")
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    u = rng.random(size)
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, w.size - 1)


def cholesky(mat) -> np.ndarray:
    """Lower Cholesky factor with a strictly positive diagonal.

    Raises
    ------
    DecompositionError
        If ``mat`` is not symmetric or not positive definite; the message
        names the first failing pivot.
    """
    a = np.asarray(mat, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError("cholesky needs a square matrix")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-12:
        raise DomainError("cholesky needs a symmetric matrix")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    m = a.shape[0]
    L = np.zeros_like(a)
    for j in range(m):
        piv = a[j, j] - L[j, :j] @ L[j, :j]
        if not piv > 0:
            raise DecompositionError(f"matrix not positive definite: pivot {j} = {piv:.3e}", pivot=j)
        L[j, j] = np.sqrt(piv)
        L[j + 1 :, j] = (a[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    raise DecompositionError("matrix not numerically positive definite", pivot=m - 1)
