"""Accuracy metrics for particle approximations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import DegenerateSupportError, DomainError
from .stats import GaussianMixture1D, make_rng, mixture_logpdf


@dataclass(frozen=True)
class KlEstimate:
    """Monte Carlo estimate of ``KL(truth || KDE)`` with its standard error."""

    value: float
    stderr: float
    n_samples: int
    bandwidth: float


def kde_logpdf(x, values, weights):
    """Log-density of a weighted Gaussian KDE with Silverman's bandwidth.

    Returns ``(log_density, bandwidth)``.
    """
    values = np.asarray(values, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    if values.size != weights.size:
        raise DomainError("values and weights differ in length")
    if values.size < 2 or np.ptp(values) == 0.0:
        raise DegenerateSupportError("KDE needs at least two distinct particle values")
    if np.any(weights < 0) or not weights.sum() > 0:
        raise DomainError("weights must be nonnegative with positive sum")
    keep = weights > 0
    if keep.sum() < 2 or np.ptp(values[keep]) == 0.0:
        raise DegenerateSupportError("weighted particles occupy a single point")
    kde = sps.gaussian_kde(values[keep], bw_method="silverman", weights=weights[keep])
    return kde.logpdf(np.atleast_1d(x)), float(np.sqrt(kde.covariance[0, 0]))


def kl_mixture_vs_particles(truth: GaussianMixture1D, values, weights, n_samples: int = 10_000,
                            rng: np.random.Generator | int | None = 0) -> KlEstimate:
    """``KL(truth || q)`` where ``q`` is a KDE of weighted particles.

    The expectation under ``truth`` is estimated from ``n_samples`` exact draws.
    """
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng)
    draws = truth.sample(rng, n_samples)
    log_q, bw = kde_logpdf(draws, values, weights)
    diff = mixture_logpdf(draws, truth) - log_q
    diff = np.where(np.isfinite(diff), diff, np.inf)
    se = float(np.std(diff, ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else float("nan")
    return KlEstimate(float(np.mean(diff)), se, n_samples, bw)


@dataclass(frozen=True)
class RmseReport:
    per_variable: np.ndarray
    pooled: float


def rmse(estimate, truth) -> RmseReport:
    """Root mean squared error over rows; columns are variables.

    1-D inputs are treated as a single variable.
    """
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise DomainError(f"shape mismatch {estimate.shape} vs {truth.shape}")
    if estimate.size == 0:
        raise DomainError("empty input")
    err = (estimate - truth).reshape(estimate.shape[0], -1)
    return RmseReport(np.sqrt(np.mean(err**2, axis=0)), float(np.sqrt(np.mean(err**2))))
