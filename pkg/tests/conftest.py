import hashlib
import json
import shutil
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
CACHE = ROOT / ".experiment_cache"


def _source_digest() -> str:
    h = hashlib.sha256()
    for path in sorted((ROOT / "src" / "vcsmc").glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def cached_experiment(**overrides):
    """Run (or reuse) a harness experiment keyed by config and source digest.

    Runs are deterministic, so a cached directory is equivalent to a fresh one
    as long as neither the configuration nor the package source changed.
    """
    from vcsmc.harness import ExperimentConfig, run_experiment

    probe = ExperimentConfig(**overrides)
    key = hashlib.sha256((probe.to_json() + _source_digest()).encode()).hexdigest()[:16]
    out = CACHE / f"{probe.env}-{key}"
    if not (out / "summary.json").exists():
        shutil.rmtree(out, ignore_errors=True)
        cfg = ExperimentConfig(**{**overrides, "out": str(out)})
        run_experiment(cfg)
    return out, json.loads((out / "summary.json").read_text())


@pytest.fixture(scope="session")
def threedoors_run():
    return cached_experiment(env="threedoors", trials=50, particles=100, iterations=1000, learning_rate=1e-2)


@pytest.fixture(scope="session")
def planar_run():
    return cached_experiment(env="planarnav", trials=10, particles=100, iterations=1000, learning_rate=1e-2)


ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance check; printed in the terminal summary."""

    def _report(key: str, ok: bool, detail: str):
        line = f"{key}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[key] = line
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
