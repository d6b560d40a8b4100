"""Fitting copula proposals by stochastic gradient ascent on E[log Z_hat].

The gradient estimator differentiates ``log Z_hat`` of one realized SMC sweep
with the proposal noise and the resampling indices held fixed.  Because the
sweep is a deterministic function of the parameters under that freezing, the
estimate equals ``sum_t sum_n w_t^n * d/dlambda log w~_t^n`` with total
derivatives, which this module accumulates in one reverse pass over time.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .proposal import CopulaProposalFamily, VariationalParams
from .smc import GenerativeModel, ParticleSystem, log_evidence, smc_run
from .stats import make_rng


def surrogate_elbo(params: VariationalParams, family: CopulaProposalFamily, model: GenerativeModel, obs,
                   n_particles: int, rng: np.random.Generator, ancestors=None) -> float:
    """Single-sample estimate of the objective: ``log Z_hat`` of one sweep."""
    ps = smc_run(model, family.bind(params), obs, n_particles, rng, ancestors=ancestors)
    return log_evidence(ps)


@dataclass
class VsmcGradient:
    elbo: float
    flat: np.ndarray
    template: VariationalParams = field(repr=False)
    particles: ParticleSystem = field(repr=False)

    @property
    def params(self) -> VariationalParams:
        """The gradient laid out like the parameters."""
        return VariationalParams.unflatten(self.flat, self.template)


def _param_path(index: int, template: VariationalParams) -> str:
    from .copula import STRUCTURES

    pos = index
    for k in STRUCTURES:
        n = np.asarray(template.theta[k]).size
        if pos < n:
            return f"theta[{k}][{pos}]"
        pos -= n
    for t, step in enumerate(template.eta):
        for i, mp in enumerate(step):
            K = mp.n_components
            if pos < 3 * K:
                name = ("logits", "means", "log_stds")[pos // K]
                return f"eta[{t}][{i}].{name}[{pos % K}]"
            pos -= 3 * K
    return f"#{index}"


def grad_vsmc(params: VariationalParams, family: CopulaProposalFamily, model: GenerativeModel, obs,
              n_particles: int, rng: np.random.Generator) -> VsmcGradient:
    """Reparameterization gradient of ``log Z_hat`` with frozen ancestors.

    The score-function term of the full gradient is dropped.
    """
    proposal = family.bind(params)
    ps = smc_run(model, proposal, obs, n_particles, rng)
    flat = _backward(proposal, model, list(obs), ps)
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise NumericError(f"non-finite gradient at {_param_path(int(bad[0]), params)}")
    return VsmcGradient(log_evidence(ps), flat, params, ps)


def _backward(proposal, model: GenerativeModel, obs, ps: ParticleSystem) -> np.ndarray:
    T, N, d = ps.particles.shape
    x_bar = np.zeros((T, N, d))
    L_bar = np.zeros((d, d))
    eta_bars = {}
    for t in range(T - 1, -1, -1):
        G = ps.normalized_weights(t)
        x = ps.particles[t]
        prev = ps.particles[t - 1][ps.ancestors[t - 1]] if t > 0 else None
        cache = proposal.step_cache(ps.noise[t], t, prev)
        if t == 0:
            gx = model.prior_logpdf_grad(x)
            gprev = None
        else:
            gx, gprev = model.transition_logpdf_grad(x, prev, t)
        gx = gx + model.observation_logpdf_grad(obs[t], x, t)
        xb = x_bar[t] + G[:, None] * gx
        Lb, eb, prev_bar = proposal.step_vjp(cache, t, G, xb)
        L_bar += Lb
        eta_bars[t] = eb
        if t > 0:
            np.add.at(x_bar[t - 1], ps.ancestors[t - 1], G[:, None] * gprev + prev_bar)
    return proposal.pack_gradient(L_bar, eta_bars)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grad, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam ascent step; returns ``(new_params, new_state)``."""
    grad = np.asarray(grad, dtype=float)
    step = state.step + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    new = np.asarray(params, dtype=float) + lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, step)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    iterations: int = 1000
    learning_rate: float = 1e-2
    n_particles: int = 100
    inner_block: int = 25
    seed: int = 0
    convergence_window: int = 50
    convergence_tol: float | None = None
    clip_norm: float = 100.0
    record_timing: bool = False
    lr_decay: float = 0.0  # lr_k = learning_rate / (1 + lr_decay * k); 0 keeps it constant

    def __post_init__(self):
        for name in ("iterations", "n_particles", "inner_block", "convergence_window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.lr_decay < 0:
            raise ValueError("lr_decay must be nonnegative")


@dataclass
class TrainRecord:
    iteration: int
    phase: str
    elbo: float
    grad_norm: float
    seconds: float


@dataclass
class TrainTrace:
    records: list[TrainRecord] = field(default_factory=list)

    COLUMNS = ("iteration", "phase", "elbo", "grad_norm", "seconds")

    def append(self, rec: TrainRecord):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("trace iterations must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    @property
    def elbo(self) -> np.ndarray:
        return np.array([r.elbo for r in self.records])

    def rows(self):
        for r in self.records:
            yield [r.iteration, r.phase, repr(r.elbo), repr(r.grad_norm), repr(r.seconds)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            w.writerows(self.rows())


def smoothed(values, window: int) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what exists."""
    values = np.asarray(values, dtype=float)
    c = np.cumsum(np.insert(values, 0, 0.0))
    idx = np.arange(1, values.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def convergence_iteration(elbo, window: int = 50, fraction: float = 0.9) -> int:
    """First iteration at which the smoothed curve has covered ``fraction`` of its total rise."""
    s = smoothed(elbo, window)
    gain = s[-1] - s[0]
    if gain <= 0:
        return len(s) - 1
    return int(np.argmax(s - s[0] >= fraction * gain))


def train(model: GenerativeModel, obs, family: CopulaProposalFamily, config: TrainConfig,
          params: VariationalParams | None = None):
    """Alternate ``inner_block`` Adam steps on theta (eta frozen) and on eta (theta frozen).

    Returns the parameters with the best windowed ELBO and the trace.  Numeric
    failures are re-raised with the partial trace attached as ``exc.trace``.
    """
    rng = make_rng(config.seed)
    if params is None:
        params = family.init_params(rng)
    masks = family.phase_masks(params)
    phases = [p for p in ("theta", "eta") if masks[p].any()]
    vec = params.flatten()
    state = AdamState.zeros(vec.size)
    trace = TrainTrace()
    best_vec, best_score = vec.copy(), -np.inf
    start = time.perf_counter()
    for it in range(config.iterations):
        phase = phases[(it // config.inner_block) % len(phases)]
        current = VariationalParams.unflatten(vec, params)
        try:
            est = grad_vsmc(current, family, model, obs, config.n_particles, rng)
        except NumericError as exc:
            exc.trace = trace
            raise
        g = np.where(masks[phase], est.flat, 0.0)
        norm = float(np.linalg.norm(g))
        if norm > config.clip_norm:
            g = g * (config.clip_norm / norm)
        seconds = time.perf_counter() - start if config.record_timing else 0.0
        trace.append(TrainRecord(it, phase, est.elbo, norm, seconds))
        elbos = trace.elbo
        if it + 1 >= min(config.convergence_window, config.iterations):
            score = float(np.mean(elbos[-config.convergence_window:]))
            if score > best_score:
                best_score, best_vec = score, vec.copy()
        vec, state = adam_step(vec, g, state, config.learning_rate / (1.0 + config.lr_decay * it))
        if config.convergence_tol is not None and it + 1 >= 2 * config.convergence_window:
            w = config.convergence_window
            recent, before = np.mean(elbos[-w:]), np.mean(elbos[-2 * w : -w])
            if (recent - before) / max(abs(before), 1e-12) < config.convergence_tol:
                break
    return VariationalParams.unflatten(best_vec, params), trace
