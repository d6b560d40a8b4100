"""Experiment runner: paired BPF vs VC-SMC trials with CSV/JSON outputs.

Every output directory receives ``config.json`` (resolved config plus package
version), ``results.csv`` (one row per trial, method, step and metric) and
``summary.json`` (medians and paired win rates recomputable from
``results.csv``).  Training traces go to ``train_trace.csv``.
"""

from __future__ import annotations

import csv
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import stats as sps

from . import __version__
from .environments import (
    LinearGaussianModel,
    PlanarNavModel,
    ThreeDoorsModel,
    exact_posterior_to_json,
    planar_nav_simulate,
    threedoors_exact_posterior,
    threedoors_simulate,
)
from .errors import DomainError
from .metrics import kl_mixture_vs_particles, rmse
from .proposal import CopulaProposalFamily
from .smc import (
    BELIEF_COLUMNS,
    belief_rows,
    bootstrap_proposal,
    filtering_moments,
    log_evidence,
    posterior_moments,
    smc_run,
)
from .stats import make_rng
from .train import TrainConfig, TrainTrace, convergence_iteration, train

log = logging.getLogger(__name__)

ENVS = ("threedoors", "planarnav", "linear_gaussian_check")
RESULT_COLUMNS = ("trial", "method", "step", "metric_name", "value", "stderr", "seed")
TRACE_COLUMNS = ("trial",) + TrainTrace.COLUMNS
LOWER_IS_BETTER = ("pose_kl", "pose_kl_mean", "landmark_rmse", "trajectory_rmse", "position_rmse")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run.

    ``step`` 0 in the outputs denotes a trial-level (not per-step) metric.
    ``anchor`` selects the proposal location: ``"transition"`` centers each
    step on the model's transition mean, ``"none"`` uses time-indexed
    marginals only.
    """

    env: str = "threedoors"
    trials: int = 50
    particles: int = 100
    iterations: int = 1000
    learning_rate: float = 1e-2
    train_particles: int = 100
    inner_block: int = 25
    seed: int = 0
    out: str = "results"
    workers: int = 1
    mc_samples: int = 10_000
    anchor: str = "transition"
    pose_components: int = 3
    init_mean_scale: float = 1.0
    record_timing: bool = False
    env_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.env not in ENVS:
            raise DomainError(f"unknown env {self.env!r}; choose from {ENVS}")
        for name in ("trials", "particles", "iterations", "train_particles", "inner_block", "workers",
                     "mc_samples", "pose_components"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be positive")
        if self.anchor not in ("transition", "none"):
            raise DomainError("anchor must be 'transition' or 'none'")
        self.env_params = dict(self.env_params)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations,
            learning_rate=self.learning_rate,
            n_particles=self.train_particles,
            inner_block=self.inner_block,
            seed=seed,
            record_timing=self.record_timing,
        )


def build_model(config: ExperimentConfig):
    if config.env == "threedoors":
        return ThreeDoorsModel(**config.env_params)
    if config.env == "planarnav":
        return PlanarNavModel(**config.env_params)
    return LinearGaussianModel(**config.env_params)


def build_family(config: ExperimentConfig, model) -> CopulaProposalFamily:
    d = model.dim
    n_mix = [1] * d
    if config.env == "threedoors":
        n_mix[0] = config.pose_components
    if config.anchor == "transition":
        return CopulaProposalFamily(model.layout, model.horizon, n_mix, anchor=model, scale=model.transition_std())
    return CopulaProposalFamily(model.layout, model.horizon, n_mix)


def trial_seeds(seed: int, trials: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(trials)


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint32)[0])


@dataclass
class TrialOutput:
    trial: int
    rows: list
    trace_rows: list
    error: str | None = None


def fit_vcsmc(config: ExperimentConfig, model, obs, seed: int):
    """Train a proposal on one observation sequence; returns ``(proposal, trace)``."""
    family = build_family(config, model)
    params = family.init_params(make_rng(seed), mean_scale=config.init_mean_scale)
    best, trace = train(model, obs, family, config.train_config(seed), params)
    return family.bind(best), trace


def _methods(config: ExperimentConfig, model, obs, seeds, rows, trial, trace_rows):
    """Run both filters; yields ``(method, particle_system)``."""
    ss_bpf, ss_train, ss_vc = seeds
    t0 = time.perf_counter()
    ps = smc_run(model, bootstrap_proposal(model), obs, config.particles, make_rng(ss_bpf))
    wall = time.perf_counter() - t0 if config.record_timing else 0.0
    rows.append([trial, "bpf", 0, "wall_time", wall, 0.0, _seed_int(ss_bpf)])
    yield "bpf", ps, _seed_int(ss_bpf)
    if config.env == "linear_gaussian_check":
        return
    t0 = time.perf_counter()
    proposal, trace = fit_vcsmc(config, model, obs, _seed_int(ss_train))
    ps = smc_run(model, proposal, obs, config.particles, make_rng(ss_vc))
    wall = time.perf_counter() - t0 if config.record_timing else 0.0
    trace_rows.extend([trial] + r for r in trace.rows())
    seed = _seed_int(ss_vc)
    rows.append([trial, "vcsmc", 0, "wall_time", wall, 0.0, seed])
    rows.append([trial, "vcsmc", 0, "convergence_iteration", float(convergence_iteration(trace.elbo)), 0.0, seed])
    yield "vcsmc", ps, seed


def run_trial(config: ExperimentConfig, trial: int) -> TrialOutput:
    """One paired trial; exceptions are captured into ``TrialOutput.error``."""
    rows, trace_rows = [], []
    try:
        ss_data, *method_seeds = trial_seeds(config.seed, config.trials)[trial].spawn(4)
        model = build_model(config)
        data_rng = make_rng(ss_data)
        if config.env == "threedoors":
            data = threedoors_simulate(model, data_rng)
            states, obs = data.states, data.observations
            exact = threedoors_exact_posterior(obs, model)
        elif config.env == "planarnav":
            data = planar_nav_simulate(model, data_rng)
            states, obs = data.states, data.observations
        else:
            states, obs = model.simulate(data_rng)
            log_z_exact = model.kalman(obs)[2]
            rows.append([trial, "kalman", 0, "log_z", log_z_exact, 0.0, _seed_int(ss_data)])
        for method, ps, seed in _methods(config, model, obs, method_seeds, rows, trial, trace_rows):
            T = ps.horizon
            rows.append([trial, method, 0, "log_z", log_evidence(ps), 0.0, seed])
            if config.env == "threedoors":
                kls = []
                for t in range(T):
                    est = kl_mixture_vs_particles(exact[t].marginal(0), ps.particles[t, :, 0],
                                                  ps.normalized_weights(t), config.mc_samples, make_rng(seed + t))
                    kls.append(est.value)
                    rows.append([trial, method, t + 1, "pose_kl", est.value, est.stderr, seed])
                rows.append([trial, method, 0, "pose_kl_mean", float(np.mean(kls)), 0.0, seed])
                means, _ = filtering_moments(ps)
                lm = rmse(means[-1:, 1:], states[-1:, 1:])
                rows.append([trial, method, T, "landmark_rmse", lm.pooled, 0.0, seed])
            elif config.env == "planarnav":
                means, _ = posterior_moments(ps)
                rep = rmse(means, states)
                rows.append([trial, method, 0, "trajectory_rmse", rep.pooled, 0.0, seed])
                pos = np.hypot(*(means[:, :2] - states[:, :2]).T)
                for t in range(T):
                    rows.append([trial, method, t + 1, "position_error", float(pos[t]), 0.0, seed])
            else:
                ratio = float(np.exp(log_evidence(ps) - log_z_exact))
                rows.append([trial, method, 0, "evidence_ratio", ratio, 0.0, seed])
        return TrialOutput(trial, rows, trace_rows)
    except Exception as exc:  # a failed trial must not abort the run
        log.warning("trial %d failed: %s", trial, exc)
        return TrialOutput(trial, [], [], f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}")


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def summarize(rows) -> dict:
    """Per-(method, metric, step) medians and means, plus paired VC-SMC vs BPF win rates.

    ``rows`` may come straight from :func:`run_trial` or be parsed back from
    ``results.csv``; both give identical summaries.
    """
    table: dict[tuple, dict[int, float]] = {}
    for trial, method, step, name, value, _stderr, _seed in rows:
        table.setdefault((str(method), str(name), int(step)), {})[int(trial)] = float(value)
    stats = []
    for (method, name, step), vals in sorted(table.items()):
        v = np.array([vals[k] for k in sorted(vals)])
        stats.append({"method": method, "metric": name, "step": step, "n": int(v.size),
                      "median": float(np.median(v)), "mean": float(np.mean(v))})
    paired = []
    for (method, name, step), vc in sorted(table.items()):
        if method != "vcsmc" or name not in LOWER_IS_BETTER:
            continue
        bpf = table.get(("bpf", name, step), {})
        common = sorted(set(vc) & set(bpf))
        if not common:
            continue
        wins = sum(vc[k] < bpf[k] for k in common)
        losses = sum(vc[k] > bpf[k] for k in common)
        p = float(sps.binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue) if wins + losses else 1.0
        paired.append({"metric": name, "step": step, "n": len(common), "vcsmc_wins": int(wins),
                       "win_rate": wins / len(common), "sign_test_p": p})
    return {"metrics": stats, "paired": paired}


def read_results(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [[int(r[0]), r[1], int(r[2]), r[3], float(r[4]), float(r[5]), int(r[6])] for r in reader]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([_fmt(v) for v in r] for r in rows)


def _write_config(config: ExperimentConfig, out: Path):
    doc = {"version": __version__, "config": config.to_dict()}
    (out / "config.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


@dataclass
class RunResult:
    out: Path
    rows: list
    summary: dict
    errors: dict
    error_fraction: float = 0.0


def _trials(config: ExperimentConfig) -> list[TrialOutput]:
    ids = range(config.trials)
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            outs = list(pool.map(run_trial, [config] * config.trials, ids))
    else:
        outs = [run_trial(config, k) for k in ids]
    return sorted(outs, key=lambda o: o.trial)


def run_experiment(config: ExperimentConfig) -> RunResult:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(config, out)
    outs = _trials(config)
    rows = [r for o in outs for r in o.rows]
    errors = {o.trial: o.error for o in outs if o.error}
    _write_csv(out / "results.csv", RESULT_COLUMNS, rows)
    if any(o.trace_rows for o in outs):
        _write_csv(out / "train_trace.csv", TRACE_COLUMNS, [r for o in outs for r in o.trace_rows])
    # summarize the serialized values so the summary is reproducible from the CSV alone
    summary = summarize(read_results(out / "results.csv"))
    summary["trials"] = config.trials
    summary["failed_trials"] = sorted(errors)
    summary["kl_direction"] = "KL(exact || particle KDE)"
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    if errors:
        (out / "errors.log").write_text("".join(f"trial {k}\n{v}\n" for k, v in sorted(errors.items())))
    return RunResult(out, rows, summary, errors, len(errors) / config.trials)


def dump_beliefs(config: ExperimentConfig) -> Path:
    """Particle clouds of BPF and VC-SMC on one 3Doors dataset, plus the exact posterior."""
    if config.env != "threedoors":
        raise DomainError("belief dumps are defined for threedoors")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(config, out)
    ss_data, ss_bpf, ss_train, ss_vc = trial_seeds(config.seed, 1)[0].spawn(4)
    model = build_model(config)
    data = threedoors_simulate(model, make_rng(ss_data))
    obs = data.observations
    exact_posterior_to_json(threedoors_exact_posterior(obs, model), out / "exact_posterior.json")
    bpf = smc_run(model, bootstrap_proposal(model), obs, config.particles, make_rng(ss_bpf))
    proposal, _ = fit_vcsmc(config, model, obs, _seed_int(ss_train))
    vc = smc_run(model, proposal, obs, config.particles, make_rng(ss_vc))
    rows = list(belief_rows(bpf, 0, "bpf")) + list(belief_rows(vc, 0, "vcsmc"))
    _write_csv(out / "beliefs.csv", BELIEF_COLUMNS + ("method",), rows)
    return out
