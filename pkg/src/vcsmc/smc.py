"""Sequential Monte Carlo with multinomial resampling at every step.

Steps are 0-based: ``t = 0`` is the initial importance-sampling step.  A
proposal is any object with

``sample(t, prev, rng, n) -> (x, log_q, noise)``
    ``prev`` holds the resampled ancestor states (``None`` at ``t = 0``);
    ``noise`` is whatever randomness the draw consumed (may be ``None``).
``logpdf(x, t, prev) -> log_q``

and a boolean ``bootstrap`` attribute.  For a bootstrap proposal the
transition terms cancel and the incremental weight is the observation
likelihood alone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .copula import Layout
from .errors import DegenerateFilterError, DomainError
from .stats import categorical_sample, logsumexp


class GenerativeModel:
    """State-space model with Markov latent dynamics.

    Subclasses define the log-densities below (vectorized over a leading
    particle axis) and, for gradient-based proposal fitting, their gradients.
    ``prior_mean``/``transition_mean`` double as proposal anchors.
    """

    layout: Layout
    horizon: int

    @property
    def dim(self) -> int:
        return self.layout.dim

    def prior_logpdf(self, x):
        raise NotImplementedError

    def prior_sample(self, rng, n):
        raise NotImplementedError

    def transition_logpdf(self, x, prev, t):
        raise NotImplementedError

    def transition_sample(self, prev, t, rng):
        raise NotImplementedError

    def observation_logpdf(self, z, x, t):
        raise NotImplementedError

    # gradients: d/dx of each log-density; transition also returns d/dprev
    def prior_logpdf_grad(self, x):
        raise NotImplementedError

    def transition_logpdf_grad(self, x, prev, t):
        raise NotImplementedError

    def observation_logpdf_grad(self, z, x, t):
        raise NotImplementedError

    def prior_mean(self):
        raise NotImplementedError

    def transition_mean(self, prev, t):
        raise NotImplementedError

    def transition_mean_vjp(self, prev, t, g):
        raise NotImplementedError

    # proposal anchoring
    def anchor_mean(self, prev, t, n):
        if prev is None:
            return np.broadcast_to(self.prior_mean(), (n, self.dim))
        return self.transition_mean(prev, t)

    def anchor_vjp(self, prev, t, g):
        return self.transition_mean_vjp(prev, t, g)

    def log_target_step(self, z_t, x, prev, t):
        """``log p(x_t | x_{t-1}) + log p(z_t | x_t)`` (prior at ``t = 0``)."""
        if t == 0:
            return self.prior_logpdf(x) + self.observation_logpdf(z_t, x, t)
        return self.transition_logpdf(x, prev, t) + self.observation_logpdf(z_t, x, t)


class BootstrapProposal:
    """The transition model used as proposal (prior at the first step)."""

    bootstrap = True

    def __init__(self, model: GenerativeModel):
        self.model = model

    def sample(self, t, prev, rng, n):
        if t == 0:
            x = self.model.prior_sample(rng, n)
        else:
            x = self.model.transition_sample(prev, t, rng)
        return x, self.logpdf(x, t, prev), None

    def logpdf(self, x, t, prev=None):
        if t == 0:
            return self.model.prior_logpdf(x)
        return self.model.transition_logpdf(x, prev, t)


def bootstrap_proposal(model: GenerativeModel) -> BootstrapProposal:
    return BootstrapProposal(model)


def incremental_log_weight(model, proposal, z_t, x, prev, t, log_q=None):
    """``log xi = log p(x_t|x_{t-1}) + log p(z_t|x_t) - log q(x_t|x_{t-1})``."""
    if log_q is None:
        log_q = proposal.logpdf(x, t, prev)
    return model.log_target_step(z_t, x, prev, t) - log_q


@dataclass
class ParticleSystem:
    """Output of one SMC sweep.

    Attributes
    ----------
    particles : ndarray, shape (T, N, d)
        ``particles[t, n]`` is the state proposed for particle ``n`` at step ``t``.
    log_weights : ndarray, shape (T, N)
        Unnormalized incremental log-weights ``log w~_t``.
    ancestors : ndarray, shape (T-1, N)
        ``ancestors[t-1, n]`` is the index at step ``t-1`` of the parent of
        particle ``n`` at step ``t``.
    log_z_terms : ndarray, shape (T,)
        ``log((1/N) sum_n w~_t^n)`` per step.
    noise : ndarray or None
        Proposal noise per step when the proposal reports it.
    """

    particles: np.ndarray
    log_weights: np.ndarray
    ancestors: np.ndarray
    log_z_terms: np.ndarray
    noise: np.ndarray | None = None

    @property
    def n_particles(self) -> int:
        return self.particles.shape[1]

    @property
    def horizon(self) -> int:
        return self.particles.shape[0]

    def normalized_weights(self, t: int = -1) -> np.ndarray:
        lw = self.log_weights[t]
        return np.exp(lw - logsumexp(lw))

    def lineage(self, index) -> np.ndarray:
        """Indices per step of the ancestral path ending at final-step ``index``."""
        T = self.horizon
        idx = np.empty((T,) + np.shape(index), dtype=int)
        idx[T - 1] = index
        for t in range(T - 1, 0, -1):
            idx[t - 1] = self.ancestors[t - 1][idx[t]]
        return idx

    def trajectories(self) -> np.ndarray:
        """All N ancestral trajectories, shape (N, T, d)."""
        if self.horizon == 0:
            return np.zeros((0, 0, 0))
        idx = self.lineage(np.arange(self.n_particles))
        return np.stack([self.particles[t, idx[t]] for t in range(self.horizon)], axis=1)


def smc_run(model: GenerativeModel, proposal, obs, n_particles: int, rng: np.random.Generator,
            ancestors=None) -> ParticleSystem:
    """Run SMC with multinomial resampling at every step.

    Randomness is consumed in a fixed order (resampling uniforms, then
    proposal noise, per step), so runs with the same seed are bit-identical.
    Passing ``ancestors`` replays given resampling indices while consuming the
    same random numbers, which freezes the discrete part of the sweep.
    """
    if n_particles < 1:
        raise DomainError("need at least one particle")
    obs = list(obs)
    T = len(obs)
    if T != model.horizon and T != 0:
        raise DomainError(f"got {T} observations for a model with horizon {model.horizon}")
    N, d = n_particles, model.dim
    particles = np.empty((T, N, d))
    log_w = np.empty((T, N))
    anc = np.empty((max(T - 1, 0), N), dtype=int)
    log_z = np.empty(T)
    noise = None
    prev = None
    for t in range(T):
        if t > 0:
            probs = np.exp(log_w[t - 1] - logsumexp(log_w[t - 1]))
            drawn = categorical_sample(probs, rng, N)
            anc[t - 1] = drawn if ancestors is None else ancestors[t - 1]
            prev = particles[t - 1][anc[t - 1]]
        x, log_q, eps = proposal.sample(t, prev, rng, N)
        if eps is not None:
            if noise is None:
                noise = np.empty((T, N) + np.shape(eps)[1:])
            noise[t] = eps
        if getattr(proposal, "bootstrap", False):
            lw = model.observation_logpdf(obs[t], x, t)
        else:
            lw = incremental_log_weight(model, proposal, obs[t], x, prev, t, log_q)
        lw = np.where(np.isnan(lw), -np.inf, lw)
        if not np.any(np.isfinite(lw)) or np.max(lw) == -np.inf:
            raise DegenerateFilterError(t)
        particles[t] = x
        log_w[t] = lw
        log_z[t] = logsumexp(lw) - np.log(N)
    return ParticleSystem(particles, log_w, anc, log_z, noise)


def log_evidence(ps: ParticleSystem) -> float:
    """``sum_t log((1/N) sum_n w~_t^n)``; zero for an empty run."""
    return float(np.sum(ps.log_z_terms))


def sample_trajectory(ps: ParticleSystem, rng: np.random.Generator) -> np.ndarray:
    """Pick a final particle by its weight and trace its ancestors back."""
    k = categorical_sample(ps.normalized_weights(-1), rng)
    idx = ps.lineage(int(k))
    return np.stack([ps.particles[t, idx[t]] for t in range(ps.horizon)])


def _weighted_moments(values, w):
    mean = np.tensordot(w, values, axes=(0, 0))
    var = np.tensordot(w, (values - mean) ** 2, axes=(0, 0))
    return mean, np.maximum(var, 0.0)


def posterior_moments(ps: ParticleSystem):
    """Per-step weighted mean and variance of the trajectories under final weights.

    Returns two arrays of shape (T, d).
    """
    w = ps.normalized_weights(-1)
    return _weighted_moments(ps.trajectories(), w)


def filtering_moments(ps: ParticleSystem):
    """Mean and variance of ``x_t`` under the step-``t`` weights, shape (T, d) each."""
    means = np.empty(ps.particles.shape[0::2])
    variances = np.empty_like(means)
    for t in range(ps.horizon):
        means[t], variances[t] = _weighted_moments(ps.particles[t], ps.normalized_weights(t))
    return means, variances


BELIEF_COLUMNS = ("trial", "t", "n", "component_index", "value", "norm_weight")


def belief_rows(ps: ParticleSystem, trial: int = 0, method: str | None = None):
    """Rows of the particle-cloud table; ``t`` is 1-based to match step numbering."""
    for t in range(ps.horizon):
        w = ps.normalized_weights(t)
        for n in range(ps.n_particles):
            for i in range(ps.particles.shape[2]):
                row = [trial, t + 1, n, i, repr(float(ps.particles[t, n, i])), repr(float(w[n]))]
                yield row if method is None else row + [method]


def write_beliefs_csv(path, ps: ParticleSystem, trial: int = 0):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BELIEF_COLUMNS)
        writer.writerows(belief_rows(ps, trial))
