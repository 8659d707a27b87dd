from __future__ import annotations

import time

import numpy as np
import pytest

from adaptive_forecast.config import RunConfig
from adaptive_forecast.ingest import TimeFrame
from adaptive_forecast.semantic import StubConfig
from adaptive_forecast.synth import Regime, SynthSpec, generate, regime_switch_spec
from adaptive_forecast.temporal import TrainSpec

ACCEPTANCE_LINES: list[str] = []
TIMINGS: dict[str, float] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def make_frame(prices, **extra) -> TimeFrame:
    prices = np.asarray(prices, dtype=float)
    dates = np.datetime64("2021-01-01", "D") + np.arange(len(prices))
    cols = {"target": prices, **{k: np.asarray(v, dtype=float) for k, v in extra.items()}}
    return TimeFrame(dates, cols, "target")


def quick_config(**kw) -> RunConfig:
    """A short-training configuration for tests that only need the plumbing."""
    base = dict(train=TrainSpec(max_epochs=4, patience=2, hidden_sizes=(8, 4, 4)), stub=StubConfig("perfect"))
    base.update(kw)
    return RunConfig(**base).validate()


@pytest.fixture(scope="session")
def small_frame() -> TimeFrame:
    return generate(SynthSpec((Regime(300, 0.0, 0.01, 1.0),), seed=3, mean_reversion=0.05))


@pytest.fixture(scope="session")
def regime_frame() -> TimeFrame:
    return generate(regime_switch_spec(1000, seed=1))


@pytest.fixture(scope="session")
def regime_config() -> RunConfig:
    return RunConfig(stub=StubConfig("noisy", sigma=0.5))


@pytest.fixture(scope="session")
def regime_prepared(regime_frame, regime_config):
    from adaptive_forecast.evaluate import prepare

    start = time.perf_counter()
    prep = prepare(regime_frame, regime_config)
    TIMINGS["regime_prepare"] = time.perf_counter() - start
    return prep


@pytest.fixture(scope="session")
def regime_runs(regime_frame, regime_config, regime_prepared):
    from adaptive_forecast.evaluate import walk_forward

    start = time.perf_counter()
    runs = {v: walk_forward(regime_frame, regime_config, regime_prepared, v) for v in ("full", "no_meta")}
    TIMINGS["regime_runs"] = time.perf_counter() - start
    return runs


def gradient_check(net, X, y, step: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Batch statistics are recomputed per call but running stats are frozen, and
    dropout must be zero so the loss is a deterministic function of parameters.
    """
    _, grads = net.loss_and_grads(X, y, update_stats=False)
    worst = 0.0
    for name, p in net.params.items():
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            up, _ = net.loss_and_grads(X, y, update_stats=False)
            p[idx] = orig - step
            down, _ = net.loss_and_grads(X, y, update_stats=False)
            p[idx] = orig
            num = (up - down) / (2 * step)
            ana = grads[name][idx]
            denom = max(abs(num), abs(ana), 1e-8)
            worst = max(worst, abs(num - ana) / denom)
    return worst


def labelled_episodes(n: int, seed: int = 0, rule=lambda z: z[0] > z[1]):
    """Resolved episodes with uniform random features and label SLM iff ``rule(z)``."""
    from adaptive_forecast.channels import Channel
    from adaptive_forecast.meta import EpisodeRecord, MetaFeatures

    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        z = rng.uniform(size=12)
        rec = EpisodeRecord(k, f"d{k}", 0.5, None, None, features=MetaFeatures.from_array(z), realized=0.5)
        rec.label = Channel.SLM if rule(z) else Channel.ML
        out.append(rec)
    return out
