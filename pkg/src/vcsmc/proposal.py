"""Copula-factorized proposal distributions.

At step ``t`` a particle is drawn by pushing standard normal noise through
the assembled copula factor and then through per-component marginal
quantiles::

    z = L_full @ eps
    m_i = F_i^{-1}(Phi(z_i); eta[t][i])
    x = anchor(prev, t) + scale * m

``anchor`` is either zero (the proposal depends on the step index only) or a
location supplied by the model, typically the transition mean of the ancestor.
The density of ``x`` is the copula density of ``Phi(z)`` times the product of
marginal densities (Sklar), with a constant Jacobian for ``scale``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .copula import (
    STRUCTURES,
    CopulaHierarchy,
    Layout,
    gauss_copula_grad_L,
    gauss_copula_logdensity_z,
    lkj_vjp,
    structure_dims,
)
from .errors import DomainError
from .stats import (
    GaussianMixture1D,
    logsumexp,
    mix_logcdf,
    mix_logpdf,
    mix_logsf,
    mix_quantile_from_normal,
    norm_logpdf,
)


@dataclass
class MarginalParams:
    """Unconstrained parameters of one univariate Gaussian-mixture marginal."""

    logits: np.ndarray
    means: np.ndarray
    log_stds: np.ndarray

    def __post_init__(self):
        self.logits = np.atleast_1d(np.asarray(self.logits, dtype=float))
        self.means = np.atleast_1d(np.asarray(self.means, dtype=float))
        self.log_stds = np.atleast_1d(np.asarray(self.log_stds, dtype=float))
        if not (self.logits.shape == self.means.shape == self.log_stds.shape):
            raise DomainError("marginal parameter arrays must share one shape")

    @classmethod
    def gaussian(cls, mean: float, std: float) -> MarginalParams:
        return cls([0.0], [mean], [np.log(std)])

    @property
    def n_components(self) -> int:
        return self.means.size

    @property
    def log_weights(self) -> np.ndarray:
        return self.logits - logsumexp(self.logits)

    @property
    def stds(self) -> np.ndarray:
        return np.exp(self.log_stds)

    def to_mixture(self) -> GaussianMixture1D:
        w = np.exp(self.log_weights)
        return GaussianMixture1D(w / w.sum(), self.means.copy(), self.stds)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.logits, self.means, self.log_stds])


@dataclass
class VariationalParams:
    """Copula parameters ``theta`` (shared over time) and marginal blocks ``eta[t][i]``."""

    theta: dict[str, np.ndarray]
    eta: list[list[MarginalParams]]

    def copy(self) -> VariationalParams:
        return VariationalParams.unflatten(self.flatten(), self)

    def flatten(self) -> np.ndarray:
        parts = [np.asarray(self.theta[k], dtype=float) for k in STRUCTURES]
        parts += [mp.flat() for step in self.eta for mp in step]
        return np.concatenate(parts) if parts else np.zeros(0)

    @classmethod
    def unflatten(cls, vec, template: VariationalParams) -> VariationalParams:
        vec = np.asarray(vec, dtype=float)
        pos = 0
        theta = {}
        for k in STRUCTURES:
            n = np.asarray(template.theta[k]).size
            theta[k] = vec[pos : pos + n].copy()
            pos += n
        eta = []
        for step in template.eta:
            row = []
            for mp in step:
                K = mp.n_components
                chunk = vec[pos : pos + 3 * K]
                row.append(MarginalParams(chunk[:K], chunk[K : 2 * K], chunk[2 * K :]))
                pos += 3 * K
            eta.append(row)
        if pos != vec.size:
            raise DomainError(f"vector of length {vec.size} does not match parameter template ({pos})")
        return cls(theta, eta)

    def theta_size(self) -> int:
        return sum(np.asarray(self.theta[k]).size for k in STRUCTURES)

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flatten())))

    # JSON layout:
    # {"theta": {structure name: [floats]},
    #  "eta": [[{"logits": [...], "means": [...], "log_stds": [...]}, ... per component] ... per step]}
    def to_dict(self) -> dict:
        return {
            "theta": {k: np.asarray(self.theta[k]).tolist() for k in STRUCTURES},
            "eta": [
                [{"logits": mp.logits.tolist(), "means": mp.means.tolist(), "log_stds": mp.log_stds.tolist()}
                 for mp in step]
                for step in self.eta
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> VariationalParams:
        theta = {k: np.asarray(d["theta"][k], dtype=float) for k in STRUCTURES}
        eta = [[MarginalParams(c["logits"], c["means"], c["log_stds"]) for c in step] for step in d["eta"]]
        return cls(theta, eta)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, text_or_path) -> VariationalParams:
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            with open(text) as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# mixture derivatives used by both the sampler VJP and the fixed-x gradient


def _mixture_terms(m, mp: MarginalParams, upper=None):
    """Derivatives of one mixture marginal evaluated at values ``m`` (shape (N,)).

    Returns ``log_f``, ``dlogf_dm``, ``dlogf_deta`` (N, 3K) at fixed ``m`` and
    ``dm_deta`` (N, 3K), the implicit derivative of the quantile ``m`` when the
    probability level ``F(m)`` is held fixed.
    """
    log_w = mp.log_weights
    w = np.exp(log_w)
    sd = mp.stds
    r = (m[:, None] - mp.means) / sd
    log_comp = log_w + norm_logpdf(r) - mp.log_stds
    log_f = logsumexp(log_comp, axis=1)
    gamma = np.exp(log_comp - log_f[:, None])
    dlogf_dm = -np.sum(gamma * r / sd, axis=1)
    dlogf_deta = np.concatenate([gamma - w, gamma * r / sd, gamma * (r * r - 1.0)], axis=1)

    lcdf_k = special.log_ndtr(r)
    lsf_k = special.log_ndtr(-r)
    lcdf = logsumexp(log_w + lcdf_k, axis=1)
    lsf = logsumexp(log_w + lsf_k, axis=1)
    if upper is None:
        upper = lsf < lcdf
    # d m / d logit_j = -pi_j (Phi_j - F) / f, evaluated on the accurate tail
    lower_term = np.exp(lcdf - log_f)[:, None] * (np.exp(lcdf_k - lcdf[:, None]) - 1.0)
    upper_term = np.exp(lsf - log_f)[:, None] * (1.0 - np.exp(lsf_k - lsf[:, None]))
    d_logit = -w * np.where(upper[:, None], upper_term, lower_term)
    dm_deta = np.concatenate([d_logit, gamma, gamma * sd * r], axis=1)
    return log_f, dlogf_dm, dlogf_deta, dm_deta, lcdf, lsf


def _scores_from_tails(lcdf, lsf):
    """Normal scores ``Phi^-1(F)`` computed from whichever tail is accurate."""
    return np.where(lcdf < lsf, special.ndtri_exp(lcdf), -special.ndtri_exp(lsf))


# ---------------------------------------------------------------------------


class ZeroAnchor:
    """Anchor for proposals that depend on the step index only."""

    def __init__(self, dim: int):
        self.dim = dim

    def anchor_mean(self, prev, t, n):
        return np.zeros((n, self.dim)) if prev is None else np.zeros_like(prev)

    def anchor_vjp(self, prev, t, g):
        return np.zeros_like(g)


@dataclass
class CopulaProposalFamily:
    """Structure of a copula-factorized proposal over a fixed horizon.

    Parameters
    ----------
    layout : Layout
        Latent dimensions.
    horizon : int
        Number of steps ``T``; ``eta`` holds one block per step.
    n_mix : sequence of int
        Mixture size of each latent component's marginal (1 = Gaussian).
    anchor : object, optional
        Provides ``anchor_mean(prev, t, n)`` and ``anchor_vjp(prev, t, g)``;
        usually the generative model.  ``None`` means no anchoring.
    scale : array, optional
        Fixed per-component scale applied to the marginal draw.
    """

    layout: Layout
    horizon: int
    n_mix: tuple
    anchor: object = None
    scale: np.ndarray = None
    masks: dict = field(init=False, repr=False)

    def __post_init__(self):
        d = self.layout.dim
        self.n_mix = tuple(int(k) for k in self.n_mix)
        if len(self.n_mix) != d:
            raise DomainError(f"n_mix needs {d} entries, got {len(self.n_mix)}")
        self.scale = np.ones(d) if self.scale is None else np.asarray(self.scale, dtype=float)
        if self.anchor is None:
            self.anchor = ZeroAnchor(d)
        self.masks = CopulaHierarchy.free_masks(self.layout)

    @property
    def dim(self) -> int:
        return self.layout.dim

    def init_params(self, rng: np.random.Generator, theta_scale=0.01, mean_scale=1.0) -> VariationalParams:
        dims = structure_dims(self.layout)
        theta = {}
        for k in STRUCTURES:
            th = np.zeros(dims[k] * (dims[k] - 1) // 2)
            th[self.masks[k]] = theta_scale * rng.standard_normal(int(self.masks[k].sum()))
            theta[k] = th
        eta = [
            [MarginalParams(np.zeros(K), mean_scale * rng.standard_normal(K), np.zeros(K)) for K in self.n_mix]
            for _ in range(self.horizon)
        ]
        return VariationalParams(theta, eta)

    def check(self, params: VariationalParams):
        if len(params.eta) != self.horizon:
            raise DomainError(f"eta has {len(params.eta)} steps, horizon is {self.horizon}")
        for step in params.eta:
            if [mp.n_components for mp in step] != list(self.n_mix):
                raise DomainError("eta block does not match the family's mixture sizes")

    def phase_masks(self, params: VariationalParams) -> dict[str, np.ndarray]:
        """Boolean masks over ``params.flatten()`` for the theta and eta phases."""
        n_th = params.theta_size()
        total = params.flatten().size
        theta_mask = np.zeros(total, dtype=bool)
        theta_mask[:n_th] = np.concatenate([self.masks[k] for k in STRUCTURES])
        eta_mask = np.zeros(total, dtype=bool)
        eta_mask[n_th:] = True
        return {"theta": theta_mask, "eta": eta_mask}

    def bind(self, params: VariationalParams) -> CopulaProposal:
        return CopulaProposal(self, params)


@dataclass
class StepCache:
    eps: np.ndarray
    z: np.ndarray
    m: np.ndarray
    prev: np.ndarray | None


class CopulaProposal:
    """A :class:`CopulaProposalFamily` with concrete parameters.

    Implements the SMC proposal protocol: ``sample(t, prev, rng, n)`` and
    ``logpdf(x, t, prev)``.
    """

    bootstrap = False

    def __init__(self, family: CopulaProposalFamily, params: VariationalParams):
        family.check(params)
        self.family = family
        self.params = params
        self.hierarchy = CopulaHierarchy.from_thetas(family.layout, params.theta)
        self.corr = self.hierarchy.full
        self.L = self.corr.L
        self._log_scale = float(np.sum(np.log(family.scale)))
        self._caches: dict[int, StepCache] = {}

    # -- reparameterized sampling -------------------------------------------

    def transform(self, eps, t: int, prev=None):
        """Deterministic map from noise to ``(x, log_q, cache)``."""
        eps = np.atleast_2d(np.asarray(eps, dtype=float))
        n, d = eps.shape
        if d != self.family.dim:
            raise DomainError(f"noise has dimension {d}, proposal expects {self.family.dim}")
        if not 0 <= t < self.family.horizon:
            raise DomainError(f"step {t} outside horizon {self.family.horizon}")
        z = eps @ self.L.T
        m = np.empty_like(z)
        log_f = np.empty_like(z)
        for i, mp in enumerate(self.params.eta[t]):
            m[:, i] = mix_quantile_from_normal(z[:, i], mp.log_weights, mp.means, mp.stds)
            log_f[:, i] = mix_logpdf(m[:, i], mp.log_weights, mp.means, mp.stds)
        x = self.family.anchor.anchor_mean(prev, t, n) + self.family.scale * m
        log_q = (
            np.sum(norm_logpdf(eps), axis=1)
            - 0.5 * self.corr.log_det
            - np.sum(norm_logpdf(z), axis=1)
            + np.sum(log_f, axis=1)
            - self._log_scale
        )
        return x, log_q, StepCache(eps, z, m, prev)

    def sample(self, t: int, prev, rng: np.random.Generator, n: int):
        eps = rng.standard_normal((n, self.family.dim))
        x, log_q, cache = self.transform(eps, t, prev)
        self._caches[t] = cache
        return x, log_q, eps

    def step_cache(self, eps, t: int, prev=None) -> StepCache:
        """Sampler intermediates for ``(eps, prev)``, reused from the last draw when they match."""
        c = self._caches.get(t)
        if c is not None and np.array_equal(c.eps, eps) and (
            (prev is None and c.prev is None) or (prev is not None and c.prev is not None and np.array_equal(c.prev, prev))
        ):
            return c
        return self.transform(eps, t, prev)[2]

    # -- density ------------------------------------------------------------

    def logpdf(self, x, t: int, prev=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        m = (x - self.family.anchor.anchor_mean(prev, t, n)) / self.family.scale
        z = np.empty_like(m)
        log_f = np.empty_like(m)
        for i, mp in enumerate(self.params.eta[t]):
            lw = mp.log_weights
            lcdf = mix_logcdf(m[:, i], lw, mp.means, mp.stds)
            lsf = mix_logsf(m[:, i], lw, mp.means, mp.stds)
            z[:, i] = _scores_from_tails(lcdf, lsf)
            log_f[:, i] = mix_logpdf(m[:, i], lw, mp.means, mp.stds)
        return gauss_copula_logdensity_z(z, self.corr) + np.sum(log_f, axis=1) - self._log_scale

    def logpdf_grad(self, x, t: int, prev=None) -> np.ndarray:
        """Gradient of ``sum_n log q(x_n)`` in the flat parameter vector, ``x`` held fixed."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        m = (x - self.family.anchor.anchor_mean(prev, t, n)) / self.family.scale
        z = np.empty_like(m)
        eta_blocks = []
        dz_deta = []
        for i, mp in enumerate(self.params.eta[t]):
            log_f, _, dlogf_deta, dm_deta, lcdf, lsf = _mixture_terms(m[:, i], mp)
            zi = _scores_from_tails(lcdf, lsf)
            z[:, i] = zi
            eta_blocks.append(dlogf_deta)
            # z = Phi^-1(F(m; eta)):  dz/deta = (dF/deta) / phi(z) = -dm_deta * f / phi(z)
            dz_deta.append(-dm_deta * np.exp(log_f - norm_logpdf(zi))[:, None])
        Lg = gauss_copula_grad_L(z, self.corr)
        # d log c / dz = -(P^-1 z) + z
        Pinv_z = np.linalg.solve(self.corr.P, z.T).T
        dc_dz = z - Pinv_z
        eta_grad = [np.sum(eb + dc_dz[:, [i]] * dz, axis=0) for i, (eb, dz) in enumerate(zip(eta_blocks, dz_deta))]
        return self._pack(Lg, {t: eta_grad})

    # -- reverse-mode pieces for the VSMC gradient --------------------------

    def step_vjp(self, cache: StepCache, t: int, G, x_bar):
        """Adjoints of ``sum_n G_n * (-log q_n)`` plus ``<x_bar, x>`` through the sampler.

        Returns ``(L_bar, eta_bar_list, prev_bar)``.
        """
        eps, z, m = cache.eps, cache.z, cache.m
        upper = z > 0
        m_bar = self.family.scale * x_bar
        z_bar = -G[:, None] * z
        eta_bar = []
        for i, mp in enumerate(self.params.eta[t]):
            log_f, dlogf_dm, dlogf_deta, dm_deta, _, _ = _mixture_terms(m[:, i], mp, upper[:, i])
            mb = m_bar[:, i] - G * dlogf_dm
            eta_bar.append(mb @ dm_deta - G @ dlogf_deta)
            z_bar[:, i] += mb * np.exp(norm_logpdf(z[:, i]) - log_f)
        L_bar = np.tril(z_bar.T @ eps) + np.sum(G) * np.diag(1.0 / np.diag(self.L))
        prev_bar = None if cache.prev is None else self.family.anchor.anchor_vjp(cache.prev, t, x_bar)
        return L_bar, eta_bar, prev_bar

    def pack_gradient(self, L_bar, eta_bars: dict[int, list[np.ndarray]]) -> np.ndarray:
        return self._pack(L_bar, eta_bars)

    def _pack(self, L_bar, eta_bars) -> np.ndarray:
        d = self.family.dim
        full_theta_bar = lkj_vjp(self.corr.theta, d, L_bar) if d > 1 else np.zeros(0)
        theta_bar = self.hierarchy.scatter_grad(full_theta_bar)
        for k in STRUCTURES:
            theta_bar[k] = theta_bar[k] * self.family.masks[k]
        parts = [theta_bar[k] for k in STRUCTURES]
        for t, step in enumerate(self.params.eta):
            if t in eta_bars:
                parts += list(eta_bars[t])
            else:
                parts += [np.zeros(3 * mp.n_components) for mp in step]
        return np.concatenate(parts)


def proposal_sample(eps, t, params: VariationalParams, family: CopulaProposalFamily, prev=None):
    """Reparameterized draw ``x_t = f(eps, prev; params)``; deterministic in its inputs."""
    x, _, _ = family.bind(params).transform(eps, t, prev)
    return x


def proposal_logpdf(x, t, params: VariationalParams, family: CopulaProposalFamily, prev=None):
    return family.bind(params).logpdf(x, t, prev)
