"""End-to-end acceptance checks. Each test records one PASS/FAIL line that is
printed in the terminal summary under "acceptance criteria"."""

import time

import numpy as np
import pytest

from adaptive_forecast.channels import Channel, ChannelPrediction
from adaptive_forecast.evaluate import improvement, is_correct, model_artifacts, reliability, reliability_from_arrays, walk_forward, write_run
from adaptive_forecast.ingest import TimeFrame
from adaptive_forecast.integrate import Override, Pipeline
from adaptive_forecast.meta import EpisodeRecord, MetaSelector, calibrate, select_probability, train_meta
from adaptive_forecast.semantic import SemanticChannel, StubConfig, ensemble_slm
from adaptive_forecast.temporal import combine_ml
from adaptive_forecast.temporal.lstm import LstmNetwork

from conftest import TIMINGS, gradient_check, labelled_episodes, record_acceptance


def check(number, passed, detail):
    record_acceptance(number, bool(passed), detail)
    assert passed, detail


def test_criterion_1_improvement_arithmetic():
    start = time.perf_counter()
    a, b = improvement(0.0324, 0.0133), improvement(0.0138, 0.0073)
    elapsed = time.perf_counter() - start
    ok = abs(a - 59.0) <= 0.1 and abs(b - 47.1) <= 0.1 and elapsed < 1
    check(1, ok, f"improvement {a:.2f}% and {b:.2f}% ({elapsed:.3f}s)")


def test_criterion_2_calibration_map():
    start = time.perf_counter()
    examples = [calibrate(0.5, 0.5, 0.5), calibrate(1.0, 0.9, 0.9), calibrate(1.0, 0.7, 0.7)]
    exact = all(abs(v - e) <= 1e-12 for v, e in zip(examples, (0.4, 0.8, 0.7)))
    grid = np.linspace(0, 1, 1000)
    capped, monotone = True, True
    for c_bar in (0.0, 0.3, 0.59, 0.6, 0.7, 0.79, 0.8, 0.9, 1.0):
        values = np.array([calibrate(p, c_bar, c_bar) for p in grid])
        capped &= bool(values.min() >= 0 and values.max() <= 0.85)
        monotone &= bool(np.all(np.diff(values) >= 0))
    elapsed = time.perf_counter() - start
    check(2, exact and capped and monotone and elapsed < 1, f"examples {examples}, cap {capped}, monotone {monotone} ({elapsed:.3f}s)")


def test_criterion_3_lstm_gradient_check():
    start = time.perf_counter()
    net = LstmNetwork.init(2, (2, 2, 2), dropout=0.0, seed=3)
    rng = np.random.default_rng(3)
    worst = gradient_check(net, rng.normal(size=(5, 6, 2)), rng.uniform(size=5))
    elapsed = time.perf_counter() - start
    check(3, worst < 1e-4 and elapsed < 10, f"worst relative error {worst:.2e} ({elapsed:.2f}s)")


def test_criterion_4_uncertainty_formulas():
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    violations = 0
    for _ in range(10_000):
        a, b = rng.uniform(0, 1, 2)
        alpha = rng.uniform(0.01, 0.99)
        p, q = combine_ml(a, b, alpha), combine_ml(b, a, alpha)
        violations += p.uncertainty != q.uncertainty
        violations += not min(a, b) - 1e-12 <= p.y_hat <= max(a, b) + 1e-12

        k = rng.integers(1, 6)
        rets, confs = rng.uniform(-50, 50, k), rng.uniform(0.01, 1, k)
        p_t = rng.uniform(0.01, 1)
        s = ensemble_slm(list(zip(rets, confs)), p_t)
        violations += not rets.min() - 1e-9 <= s.parts["return_pct"] <= rets.max() + 1e-9
        violations += ensemble_slm(list(zip(np.zeros(k), confs)), p_t).y_hat != p_t
    elapsed = time.perf_counter() - start
    check(4, violations == 0 and elapsed < 5, f"{violations} violations in 10000 cases ({elapsed:.2f}s)")


def test_criterion_5_sanity_guarantee():
    start = time.perf_counter()
    n = 5011
    rng = np.random.default_rng(5)
    prices = rng.uniform(0.01, 1, n)
    truth = lambda t: (prices[t + 1] - prices[t]) / prices[t] * 100 if t + 1 < n else None

    def ml_source(t):
        if rng.uniform() < 0.05:
            return None
        return combine_ml(*rng.uniform(-0.5, 1.5, 2))

    sem = SemanticChannel("X", 8, 3, stub=StubConfig("noisy", sigma=40.0, seed=5))
    pipe = Pipeline([f"d{k}" for k in range(n)], prices, ml_source, sem, MetaSelector(seed=5), truth_source=truth)
    records = pipe.run(range(10, 5010))
    emitted = [r for r in records if r.y_hat is not None]  # both channels down: nothing emitted
    bad = 0
    for r in emitted:
        dev = abs(r.y_hat - r.p_t) / r.p_t
        if not 0 <= r.y_hat <= 1:
            bad += 1
        elif r.override == Override.CAPPED:
            bad += not (abs(dev - 0.5) <= 1e-9 or r.y_hat in (0.0, 1.0))
        else:
            bad += dev > 0.5 + 1e-12
    capped = sum(r.override == Override.CAPPED for r in emitted)
    elapsed = time.perf_counter() - start
    ok = len(records) == 5000 and len(emitted) > 4500 and bad == 0 and elapsed < 120
    check(5, ok, f"{len(emitted)} of {len(records)} steps emitted, {bad} violations, {capped} capped ({elapsed:.1f}s)")


def test_criterion_6_meta_label_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    agree = 0
    for k in range(200):
        s, m, y = rng.uniform(0, 1, 3)
        if k % 10 == 0:
            m = s  # exact ties
        rec = EpisodeRecord(k, "d", 0.5, ChannelPrediction(s, 0.5, 0.5, Channel.SLM), ChannelPrediction(m, 0.5, 0.5, Channel.ML))
        rec.resolve(y)
        brute = min((abs(m - y), 0, Channel.ML), (abs(s - y), 1, Channel.SLM))[2]
        agree += rec.label is brute

    clf = train_meta(labelled_episodes(400, seed=6), seed=6)
    held_out = labelled_episodes(500, seed=60)
    picks = [select_probability(clf, e.features) > 0.5 for e in held_out]
    accuracy = float(np.mean([p == (e.label is Channel.SLM) for p, e in zip(picks, held_out)]))
    elapsed = time.perf_counter() - start
    ok = agree == 200 and accuracy > 0.9 and elapsed < 30
    check(6, ok, f"labels {agree}/200, held-out selection accuracy {accuracy:.3f} ({elapsed:.1f}s)")


@pytest.mark.slow
def test_criterion_7_adaptive_advantage(regime_runs):
    full, static = regime_runs["full"].report, regime_runs["no_meta"].report
    best_single = min(full.slm_mae, full.ml_mae)
    elapsed = TIMINGS.get("regime_prepare", 0) + TIMINGS.get("regime_runs", 0)
    ok = full.mae <= 1.05 * best_single and full.mae < static.mae and elapsed < 300
    detail = f"full {full.mae:.4f}, SLM-only {full.slm_mae:.4f}, ML-only {full.ml_mae:.4f}, 50/50 {static.mae:.4f} ({elapsed:.0f}s)"
    check(7, ok, detail)


@pytest.fixture(scope="module")
def fresh_run(regime_frame, regime_config):
    start = time.perf_counter()
    result = walk_forward(regime_frame, regime_config)
    return result, time.perf_counter() - start


def _bytes(result, path):
    written = write_run(result, path)
    return {name: written[name].read_bytes() for name in ("report.json", "forecasts.csv")}


@pytest.mark.slow
def test_criterion_8_leakage_and_determinism(regime_frame, regime_config, regime_runs, fresh_run, tmp_path):
    start = time.perf_counter()
    first, first_time = fresh_run
    same = _bytes(first, tmp_path / "a") == _bytes(regime_runs["full"], tmp_path / "b")

    n_train = first.prepared.split.n_train
    target = regime_frame.target.copy()
    target[n_train:] *= np.linspace(1.0, 1.3, len(target) - n_train)
    perturbed_frame = TimeFrame(regime_frame.dates, {**regime_frame.columns, regime_frame.target_column: target}, regime_frame.target_column)
    perturbed = walk_forward(perturbed_frame, regime_config)
    metrics_moved = (perturbed.report.mae, perturbed.report.rmse) != (first.report.mae, first.report.rmse)
    artifacts_same = model_artifacts(perturbed) == model_artifacts(first)
    elapsed = time.perf_counter() - start + first_time
    ok = same and metrics_moved and artifacts_same and elapsed < 300
    detail = f"byte-identical {same}, metrics changed {metrics_moved} (MAE {first.report.mae:.4f} -> {perturbed.report.mae:.4f}), artifacts identical {artifacts_same} ({elapsed:.0f}s)"
    check(8, ok, detail)


def test_criterion_9_reliability_accounting(regime_runs):
    start = time.perf_counter()
    records = regime_runs["full"].records
    bins, _ = reliability(records)
    resolved = sum(r.resolved and r.y_hat is not None for r in records)
    counts_ok = sum(b.count for b in bins) == resolved

    # calibrated: in each bin the fraction correct equals the stated confidence
    conf, correct = [], []
    for c in np.arange(0.05, 1.0, 0.1):
        k = int(round(c * 100))
        conf += [c] * 100
        correct += [True] * k + [False] * (100 - k)
    _, ce_good = reliability_from_arrays(conf, correct)

    # miscalibrated episode log: confident forecasts that all miss
    bad_log = []
    for k in range(200):
        r = EpisodeRecord(k, "d", 0.5, None, None, y_hat=0.5, calibrated_confidence=0.85 if k % 2 else 0.02)
        r.resolve(0.9 if k % 2 else 0.5)
        bad_log.append(r)
    assert all(is_correct(r.y_hat, r.realized) != bool(k % 2) for k, r in enumerate(bad_log))
    _, ce_bad = reliability(bad_log)
    elapsed = time.perf_counter() - start
    ok = counts_ok and ce_good < 0.01 and ce_bad > 0.4 and elapsed < 5
    check(9, ok, f"counts sum {counts_ok}, CE calibrated {ce_good:.4f}, CE miscalibrated {ce_bad:.3f} ({elapsed:.2f}s)")


@pytest.mark.slow
def test_criterion_10_end_to_end_runtime(fresh_run):
    result, elapsed = fresh_run
    s = result.prepared.split
    sizes = (s.n_fit, s.n_val, s.n_test)
    ok = s.n_rows == 1000 and sizes == (720, 80, 200) and result.report.n == 200 and elapsed < 300
    check(10, ok, f"split {sizes[0]}/{sizes[1]}/{sizes[2]}, {result.report.n} test forecasts ({elapsed:.0f}s)")
