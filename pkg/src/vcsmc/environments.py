"""Benchmark state-space models and their exact oracles.

* :class:`LinearGaussianModel` - scalar linear-Gaussian SSM with a Kalman filter.
* :class:`ThreeDoorsModel` - a robot on a line ranging to one of three doors
  with unknown data association; the filtering posterior is an exact
  Gaussian mixture with ``3**t`` components.
* :class:`PlanarNavModel` - constant-speed planar motion observed through its
  range to the origin.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .copula import Layout
from .errors import DomainError
from .smc import GenerativeModel
from .stats import LOG_SQRT_2PI, GaussianMixture1D, logsumexp


def _gauss_logpdf(x, mean, var):
    return -0.5 * (x - mean) ** 2 / var - 0.5 * np.log(var) - LOG_SQRT_2PI


# ---------------------------------------------------------------------------
# linear-Gaussian


@dataclass
class LinearGaussianModel(GenerativeModel):
    """``x_1 ~ N(m0, p0)``, ``x_t = a x_{t-1} + N(0, q)``, ``z_t = h x_t + N(0, r)``."""

    a: float = 0.9
    q: float = 1.0
    r: float = 1.0
    h: float = 1.0
    m0: float = 0.0
    p0: float = 1.0
    horizon: int = 5

    def __post_init__(self):
        if min(self.q, self.r, self.p0) <= 0:
            raise DomainError("variances must be positive")
        self.layout = Layout(d_s=1)

    def prior_logpdf(self, x):
        return _gauss_logpdf(x[:, 0], self.m0, self.p0)

    def prior_sample(self, rng, n):
        return self.m0 + np.sqrt(self.p0) * rng.standard_normal((n, 1))

    def transition_logpdf(self, x, prev, t):
        return _gauss_logpdf(x[:, 0], self.a * prev[:, 0], self.q)

    def transition_sample(self, prev, t, rng):
        return self.a * prev + np.sqrt(self.q) * rng.standard_normal(prev.shape)

    def observation_logpdf(self, z, x, t):
        return _gauss_logpdf(z, self.h * x[:, 0], self.r)

    def prior_logpdf_grad(self, x):
        return -(x - self.m0) / self.p0

    def transition_logpdf_grad(self, x, prev, t):
        e = (x - self.a * prev) / self.q
        return -e, self.a * e

    def observation_logpdf_grad(self, z, x, t):
        return self.h * (z - self.h * x) / self.r

    def prior_mean(self):
        return np.array([self.m0])

    def transition_mean(self, prev, t):
        return self.a * prev

    def transition_mean_vjp(self, prev, t, g):
        return self.a * g

    def simulate(self, rng):
        x = np.empty(self.horizon)
        x[0] = self.m0 + np.sqrt(self.p0) * rng.standard_normal()
        for t in range(1, self.horizon):
            x[t] = self.a * x[t - 1] + np.sqrt(self.q) * rng.standard_normal()
        z = self.h * x + np.sqrt(self.r) * rng.standard_normal(self.horizon)
        return x, z

    def kalman(self, obs):
        """Filtering means, variances and the exact log evidence."""
        means, variances = [], []
        log_z = 0.0
        m, p = self.m0, self.p0
        for t, z in enumerate(obs):
            if t > 0:
                m, p = self.a * m, self.a * self.a * p + self.q
            s = self.h * self.h * p + self.r
            log_z += float(_gauss_logpdf(z, self.h * m, s))
            k = p * self.h / s
            m, p = m + k * (z - self.h * m), (1.0 - k * self.h) * p
            means.append(m)
            variances.append(p)
        return np.array(means), np.array(variances), log_z

    def local_posterior(self, prev_mean, t, z):
        """Mean and variance of ``p(x_t | x_{t-1}, z_t)``; ``prev_mean`` is ``a x_{t-1}`` or the prior mean."""
        p = self.p0 if t == 0 else self.q
        s = self.h * self.h * p + self.r
        k = p * self.h / s
        return prev_mean + k * (z - self.h * prev_mean), (1.0 - k * self.h) * p


class LocallyOptimalProposal:
    """``p(x_t | x_{t-1}, z_t)`` for a :class:`LinearGaussianModel`."""

    bootstrap = False

    def __init__(self, model: LinearGaussianModel, obs):
        self.model = model
        self.obs = list(obs)

    def _moments(self, t, prev):
        center = np.full((1, 1), self.model.m0) if prev is None else self.model.a * prev
        return self.model.local_posterior(center, t, self.obs[t])

    def sample(self, t, prev, rng, n):
        mean, var = self._moments(t, prev)
        x = mean + np.sqrt(var) * rng.standard_normal((n, 1))
        return x, self.logpdf(x, t, prev), None

    def logpdf(self, x, t, prev=None):
        mean, var = self._moments(t, prev)
        return _gauss_logpdf(x[:, 0], mean[:, 0], var)


# ---------------------------------------------------------------------------
# 3Doors


@dataclass
class ThreeDoorsModel(GenerativeModel):
    """Pose ``s`` and three door positions; ``z_t ~ sum_i 1/3 N(l_i - s_t, var_z)``.

    Latent vector per step: ``(s, l_1, l_2, l_3)``.
    """

    landmarks: tuple = (0.0, 2.0, 6.0)
    velocity: float = 2.0
    var_s: float = 0.1
    var_l: float = 0.1
    var_z: float = 0.1
    horizon: int = 3

    def __post_init__(self):
        if min(self.var_s, self.var_l, self.var_z) < 0:
            raise DomainError("variances must be nonnegative")
        self.landmarks = tuple(float(v) for v in self.landmarks)
        self.layout = Layout(d_s=1, n_landmarks=len(self.landmarks), d_l=1)
        self._mean0 = np.array((0.0,) + self.landmarks)
        self._var = np.array([self.var_s] + [self.var_l] * len(self.landmarks))
        self._shift = np.zeros(self.layout.dim)
        self._shift[0] = self.velocity

    @property
    def n_doors(self) -> int:
        return len(self.landmarks)

    def prior_logpdf(self, x):
        return np.sum(_gauss_logpdf(x, self._mean0, self._var), axis=1)

    def prior_sample(self, rng, n):
        return self._mean0 + np.sqrt(self._var) * rng.standard_normal((n, self.dim))

    def transition_logpdf(self, x, prev, t):
        return np.sum(_gauss_logpdf(x, prev + self._shift, self._var), axis=1)

    def transition_sample(self, prev, t, rng):
        return prev + self._shift + np.sqrt(self._var) * rng.standard_normal(prev.shape)

    def _obs_terms(self, z, x):
        means = x[:, 1:] - x[:, :1]
        log_terms = _gauss_logpdf(z, means, self.var_z) - np.log(self.n_doors)
        return means, log_terms

    def observation_logpdf(self, z, x, t):
        return logsumexp(self._obs_terms(z, x)[1], axis=1)

    def prior_logpdf_grad(self, x):
        return -(x - self._mean0) / self._var

    def transition_logpdf_grad(self, x, prev, t):
        e = (x - prev - self._shift) / self._var
        return -e, e

    def observation_logpdf_grad(self, z, x, t):
        means, log_terms = self._obs_terms(z, x)
        gamma = np.exp(log_terms - logsumexp(log_terms, axis=1, keepdims=True))
        g_l = gamma * (z - means) / self.var_z
        return np.concatenate([-g_l.sum(axis=1, keepdims=True), g_l], axis=1)

    def prior_mean(self):
        return self._mean0.copy()

    def transition_mean(self, prev, t):
        return prev + self._shift

    def transition_mean_vjp(self, prev, t, g):
        return g

    def transition_std(self):
        return np.sqrt(self._var)


@dataclass
class ThreeDoorsDataset:
    states: np.ndarray  # (T, 1 + n_doors)
    associations: np.ndarray  # (T,) door index, diagnostics only
    observations: np.ndarray  # (T,)


def threedoors_simulate(model: ThreeDoorsModel, rng: np.random.Generator) -> ThreeDoorsDataset:
    T, d = model.horizon, model.dim
    sd = np.sqrt(model._var)
    states = np.empty((T, d))
    assoc = np.empty(T, dtype=int)
    obs = np.empty(T)
    states[0] = model._mean0 + sd * rng.standard_normal(d)
    for t in range(T):
        if t > 0:
            states[t] = states[t - 1] + model._shift + sd * rng.standard_normal(d)
        assoc[t] = rng.integers(model.n_doors)
        obs[t] = states[t, 1 + assoc[t]] - states[t, 0] + np.sqrt(model.var_z) * rng.standard_normal()
    return ThreeDoorsDataset(states, assoc, obs)


@dataclass
class ExactMixturePosterior:
    """Filtering posterior at one step as a mixture of joint Gaussians.

    ``component_loglik[k]`` is ``log p(z_t | z_{1:t-1}, c_{1:t})`` for the
    association sequence ``hypotheses[k]`` (before mixing weights).
    """

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    covs: np.ndarray  # (K, d, d)
    hypotheses: list = field(default_factory=list)
    component_loglik: np.ndarray = None
    log_evidence: float = float("nan")  # log p(z_{1:t})

    @property
    def n_components(self) -> int:
        return self.weights.size

    def marginal(self, i: int) -> GaussianMixture1D:
        return GaussianMixture1D(self.weights, self.means[:, i], np.sqrt(self.covs[:, i, i]))

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
            "hypotheses": [list(h) for h in self.hypotheses],
        }


def threedoors_exact_posterior(obs, model: ThreeDoorsModel) -> list[ExactMixturePosterior]:
    """Exact filtering posteriors for ``t = 1..len(obs)`` by enumerating associations.

    Each association sequence is a linear-Gaussian model; its Kalman filter
    gives a joint Gaussian and a marginal likelihood, and mixture weights are
    proportional to ``(1/3)**t`` times the accumulated likelihood.
    """
    obs = list(obs)
    if len(obs) > model.horizon:
        raise DomainError(f"at most {model.horizon} observations")
    d, nd = model.dim, model.n_doors
    Q = np.diag(model._var)
    out = []
    # state per hypothesis: (mean, cov, accumulated log weight)
    hyps = {(): (model._mean0.copy(), Q.copy(), 0.0)}
    for t, z in enumerate(obs):
        new = {}
        logliks = []
        for h, (m, P, lw) in hyps.items():
            if t > 0:
                m, P = m + model._shift, P + Q
            for c in range(nd):
                H = np.zeros(d)
                H[0], H[1 + c] = -1.0, 1.0
                s = H @ P @ H + model.var_z
                K = P @ H / s
                ll = float(_gauss_logpdf(z, H @ m, s))
                m_new = m + K * (z - H @ m)
                P_new = P - np.outer(K, K) * s
                P_new = 0.5 * (P_new + P_new.T)
                new[h + (c,)] = (m_new, P_new, lw + ll - np.log(nd))
                logliks.append(ll)
        hyps = new
        keys = list(hyps)
        lws = np.array([hyps[k][2] for k in keys])
        w = np.exp(lws - logsumexp(lws))
        out.append(
            ExactMixturePosterior(
                w / w.sum(),
                np.array([hyps[k][0] for k in keys]),
                np.array([hyps[k][1] for k in keys]),
                keys,
                np.array(logliks),
                float(logsumexp(lws)),
            )
        )
    return out


# ---------------------------------------------------------------------------
# planar navigation


@dataclass
class PlanarNavModel(GenerativeModel):
    """State ``(x, y, heading)`` moving at speed ``v``; observation is range to the origin.

    ``initial_pose`` is the known pose before the first step; ``x_1`` is one
    noisy kinematic step from it.
    """

    speed: float = 0.5
    initial_pose: tuple = (1.0, 0.0, np.pi / 2)
    process_std: tuple = (0.05, 0.05, 0.05)
    range_std: float = 0.1
    horizon: int = 10

    def __post_init__(self):
        self.process_std = tuple(float(s) for s in np.broadcast_to(self.process_std, (3,)))
        self.initial_pose = tuple(float(v) for v in self.initial_pose)
        if min(self.process_std) < 0 or self.range_std < 0 or not self.speed > 0:
            raise DomainError("noise stds must be nonnegative and speed positive")
        self.layout = Layout(d_s=3)
        self._var = np.square(self.process_std)

    def _step(self, prev):
        out = np.array(prev, dtype=float, copy=True)
        out[..., 0] += self.speed * np.cos(prev[..., 2])
        out[..., 1] += self.speed * np.sin(prev[..., 2])
        return out

    def prior_mean(self):
        return self._step(np.array(self.initial_pose))

    def prior_logpdf(self, x):
        return np.sum(_gauss_logpdf(x, self.prior_mean(), self._var), axis=1)

    def prior_sample(self, rng, n):
        return self.prior_mean() + np.sqrt(self._var) * rng.standard_normal((n, 3))

    def transition_mean(self, prev, t):
        return self._step(prev)

    def transition_mean_vjp(self, prev, t, g):
        out = np.array(g, dtype=float, copy=True)
        out[:, 2] += self.speed * (-np.sin(prev[:, 2]) * g[:, 0] + np.cos(prev[:, 2]) * g[:, 1])
        return out

    def transition_logpdf(self, x, prev, t):
        return np.sum(_gauss_logpdf(x, self._step(prev), self._var), axis=1)

    def transition_sample(self, prev, t, rng):
        return self._step(prev) + np.sqrt(self._var) * rng.standard_normal(prev.shape)

    def _range(self, x):
        return np.hypot(x[:, 0], x[:, 1])

    def observation_logpdf(self, z, x, t):
        return _gauss_logpdf(z, self._range(x), self.range_std**2)

    def prior_logpdf_grad(self, x):
        return -(x - self.prior_mean()) / self._var

    def transition_logpdf_grad(self, x, prev, t):
        e = (x - self._step(prev)) / self._var
        return -e, self.transition_mean_vjp(prev, t, e)

    def observation_logpdf_grad(self, z, x, t):
        r = np.maximum(self._range(x), 1e-300)
        c = (z - r) / self.range_std**2 / r
        g = np.zeros_like(x)
        g[:, 0] = c * x[:, 0]
        g[:, 1] = c * x[:, 1]
        return g

    def transition_std(self):
        return np.sqrt(self._var)


@dataclass
class PlanarDataset:
    states: np.ndarray  # (T, 3)
    observations: np.ndarray  # (T,)
    associations: np.ndarray = None


def planar_nav_simulate(model: PlanarNavModel, rng: np.random.Generator) -> PlanarDataset:
    T = model.horizon
    states = np.empty((T, 3))
    sd = np.sqrt(model._var)
    prev = np.array(model.initial_pose)
    for t in range(T):
        states[t] = model._step(prev) + sd * rng.standard_normal(3)
        prev = states[t]
    obs = np.hypot(states[:, 0], states[:, 1]) + model.range_std * rng.standard_normal(T)
    return PlanarDataset(states, obs)


def planar_nav_model(**config) -> PlanarNavModel:
    return PlanarNavModel(**config)


def make_generative(model) -> GenerativeModel:
    """Validate that ``model`` implements the SMC-facing interface and return it."""
    needed = ("prior_logpdf", "transition_logpdf", "observation_logpdf", "transition_sample", "prior_sample")
    for name in needed:
        if not callable(getattr(model, name, None)):
            raise DomainError(f"model lacks {name}")
    return model


def dataset_to_json(env: str, seed: int, model, data, path=None) -> str:
    params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(model).items()}
    doc = {
        "env": env,
        "seed": int(seed),
        "params": params,
        "states": np.asarray(data.states).tolist(),
        "associations": None if data.associations is None else np.asarray(data.associations).tolist(),
        "observations": np.asarray(data.observations).tolist(),
    }
    text = json.dumps(doc, indent=1)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def exact_posterior_to_json(posteriors: list[ExactMixturePosterior], path=None) -> str:
    text = json.dumps([{"t": t + 1, **p.to_dict()} for t, p in enumerate(posteriors)])
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
