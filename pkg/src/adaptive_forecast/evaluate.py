"""Metrics, reliability analysis, and the walk-forward / ablation / sweep harness."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .channels import EPS, Channel, ChannelPrediction
from .config import ConfigError, RunConfig
from .features import FeatureMatrix, build_features
from .ingest import DataError, ScalerParams, TimeFrame, fit_scaler, scale_values, transform
from .integrate import VARIANTS, Override, Pipeline
from .meta import EpisodeRecord, MetaClassifier, MetaSelector
from .semantic import PromptContext, SemanticChannel, SlmClient
from .synth import SIGNAL_COLUMN
from .temporal import TemporalModel, combine_ml, forest_fit, lstm_fit

log = logging.getLogger(__name__)


# metrics


def metrics(y, y_hat) -> tuple[float, float, float | None]:
    """(MAE, RMSE, R^2); R^2 is None when the truth has zero variance."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if len(y) < 2:
        raise ValueError("metrics need at least two points")
    err = y - y_hat
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = None if ss_tot == 0 else float(1.0 - np.sum(err * err) / ss_tot)
    return mae, rmse, r2


def improvement(baseline_mae: float, candidate_mae: float) -> float:
    """Relative MAE reduction in percent."""
    if not baseline_mae > 0:
        raise ValueError("baseline MAE must be positive")
    return 100.0 * (baseline_mae - candidate_mae) / baseline_mae


@dataclass(frozen=True)
class ReliabilityBin:
    lower: float
    upper: float
    mean_confidence: float
    accuracy: float
    count: int


def reliability_from_arrays(confidences, correct, bins: int = 10) -> tuple[list[ReliabilityBin], float]:
    """Equal-width confidence bins over [0, 1] and the count-weighted calibration error."""
    conf = np.asarray(confidences, dtype=float)
    ok = np.asarray(correct, dtype=float)
    if len(conf) == 0:
        raise ValueError("no records to bin")
    idx = np.minimum((conf * bins).astype(int), bins - 1)
    out, ce = [], 0.0
    for j in range(bins):
        m = idx == j
        n_j = int(m.sum())
        if n_j == 0:
            continue
        p_j, acc_j = float(conf[m].mean()), float(ok[m].mean())
        out.append(ReliabilityBin(j / bins, (j + 1) / bins, p_j, acc_j, n_j))
        ce += abs(p_j - acc_j) * n_j / len(conf)
    return out, float(ce)


def is_correct(y_hat: float, realized: float, threshold: float = 0.05) -> bool:
    return abs(y_hat - realized) / max(realized, EPS) <= threshold


def reliability(records, bins: int = 10, correctness_threshold: float = 0.05):
    usable = [r for r in records if r.resolved and r.y_hat is not None and r.calibrated_confidence is not None]
    if not usable:
        raise ValueError("no resolved records with a forecast")
    conf = [r.calibrated_confidence for r in usable]
    ok = [is_correct(r.y_hat, r.realized, correctness_threshold) for r in usable]
    return reliability_from_arrays(conf, ok, bins)


def meta_decision_quality(records) -> float:
    """Share of comparable steps where the selected channel beat the other (ties fail)."""
    wins = total = 0
    for r in records:
        if not r.resolved or r.slm_pred is None or r.ml_pred is None or r.selected not in (Channel.SLM, Channel.ML):
            continue
        chosen = r.slm_pred if r.selected is Channel.SLM else r.ml_pred
        other = r.ml_pred if r.selected is Channel.SLM else r.slm_pred
        total += 1
        wins += abs(chosen.y_hat - r.realized) < abs(other.y_hat - r.realized)
    if total == 0:
        raise ValueError("no comparable records")
    return wins / total


# reports


@dataclass
class EvalReport:
    mae: float
    rmse: float
    r_squared: float | None
    calibration_error: float
    reliability_bins: list[ReliabilityBin]
    meta_decision_quality: float | None
    channel_usage: dict[str, int]
    n: int
    slm_mae: float | None = None
    ml_mae: float | None = None
    overrides: dict[str, int] = field(default_factory=dict)
    n_skipped: int = 0
    split: dict[str, int] = field(default_factory=dict)
    variant: str = "full"

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["reliability_bins"] = [b.__dict__ for b in self.reliability_bins]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _channel_mae(records, attr: str) -> float | None:
    errs = [abs(getattr(r, attr).y_hat - r.realized) for r in records if r.resolved and getattr(r, attr) is not None]
    return float(np.mean(errs)) if errs else None


def build_report(records, cfg: RunConfig, split: dict[str, int] | None = None, variant: str = "full") -> EvalReport:
    emitted = [r for r in records if r.resolved and r.y_hat is not None]
    y = [r.realized for r in emitted]
    y_hat = [r.y_hat for r in emitted]
    mae, rmse, r2 = metrics(y, y_hat)
    bins, ce = reliability(emitted, cfg.reliability_bins, cfg.correctness_threshold)
    try:
        mdq = meta_decision_quality(emitted)
    except ValueError:
        mdq = None
    usage: dict[str, int] = {}
    overrides: dict[str, int] = {}
    for r in emitted:
        usage[r.selected.value] = usage.get(r.selected.value, 0) + 1
        overrides[r.override] = overrides.get(r.override, 0) + 1
    return EvalReport(
        mae,
        rmse,
        r2,
        ce,
        bins,
        mdq,
        dict(sorted(usage.items())),
        len(emitted),
        _channel_mae(records, "slm_pred"),
        _channel_mae(records, "ml_pred"),
        dict(sorted(overrides.items())),
        sum(1 for r in records if r.override == Override.SKIPPED),
        dict(split or {}),
        variant,
    )


# walk-forward harness


@dataclass(frozen=True)
class Split:
    n_rows: int
    n_train: int
    n_val: int
    warmup: int
    seq_len: int

    @property
    def n_fit(self) -> int:
        return self.n_train - self.n_val

    @property
    def n_test(self) -> int:
        return self.n_rows - self.n_train

    @property
    def train_origins(self) -> range:
        return range(self.warmup + self.seq_len - 1, self.n_fit - 1)

    @property
    def val_origins(self) -> range:
        return range(self.n_fit - 1, self.n_train - 1)

    @property
    def test_origins(self) -> range:
        return range(self.n_train - 1, self.n_rows - 1)

    def as_dict(self) -> dict[str, int]:
        return {"rows": self.n_rows, "train": self.n_train, "fit": self.n_fit, "validation": self.n_val, "test": self.n_test, "warmup": self.warmup}


def make_split(n_rows: int, cfg: RunConfig, warmup: int = 0) -> Split:
    n_train = cfg.forward_context if cfg.protocol == "forward" else int(math.floor(cfg.train_fraction * n_rows + 1e-9))
    n_val = int(round(cfg.val_fraction * n_train))
    split = Split(n_rows, n_train, n_val, warmup, cfg.train.seq_len)
    if n_train >= n_rows or n_val < 1:
        raise DataError(f"{n_rows} rows cannot hold a {n_train}-row training slice with validation")
    if len(split.train_origins) < max(cfg.train.batch_size, 10):
        raise DataError(f"insufficient rows: {len(split.train_origins)} training sequences after warmup {warmup}")
    return split


@dataclass
class Prepared:
    """Everything fitted before the first test step; shared by ablations and sweeps."""

    frame: TimeFrame
    scaler: ScalerParams
    scaled: TimeFrame
    features: FeatureMatrix
    split: Split
    model: TemporalModel
    member_preds: dict[int, tuple[float, float]]
    train_history: list[tuple[float, float]]

    def ml_source(self, alpha: float):
        def source(t: int) -> ChannelPrediction | None:
            if t not in self.member_preds:
                return None
            a, b = self.member_preds[t]
            return combine_ml(a, b, alpha, allow_boundary=True)

        return source


def prepare(frame: TimeFrame, cfg: RunConfig) -> Prepared:
    """Split, scale on the training rows only, build features, train the temporal channel."""
    cfg.validate()
    split0 = make_split(len(frame), cfg)
    scaler = fit_scaler(frame.slice(0, split0.n_train))
    scaled = transform(frame, scaler)
    fm = build_features(scaled, cfg.indicators, cfg.routing)
    split = make_split(len(frame), cfg, fm.warmup)
    W, L = split.warmup, split.seq_len
    target = scaled.target

    def samples(origins: range):
        rows = np.arange(origins.start, origins.stop) - W
        X = np.stack([fm.values[r - L + 1 : r + 1] for r in rows])
        return X, target[np.asarray(origins) + 1], rows

    X_tr, y_tr, rows_tr = samples(split.train_origins)
    X_va, y_va, _ = samples(split.val_origins)
    spec = replace(cfg.train, seed=cfg.seed_for("lstm"))
    result = lstm_fit(X_tr, y_tr, X_va, y_va, spec)
    forest = forest_fit(fm.values[rows_tr], y_tr, seed=cfg.seed_for("forest"))
    model = TemporalModel(result.network, forest, L, fm.names, cfg.alpha, spec)

    origins = np.arange(split.n_fit - 1, split.n_rows)
    lstm_out, rf_out = model.member_predictions(fm.values, origins - W)
    members = {int(t): (float(a), float(b)) for t, a, b in zip(origins, lstm_out, rf_out)}
    log.info("temporal channel trained: best epoch %d, validation MSE %.3g", result.best_epoch, result.best_val_loss)
    return Prepared(frame, scaler, scaled, fm, split, model, members, result.history)


def _truth_source(prep: Prepared):
    """Next-step scaled return in percent for the stub; uses the semantic side channel when present."""
    p = prep.scaled.target
    raw = prep.frame.target
    lo, hi = prep.scaler.per_column[prep.frame.target_column]
    signal = prep.frame.columns.get(SIGNAL_COLUMN)

    def source(t: int) -> float | None:
        if signal is not None:
            implied = float(scale_values(np.array([raw[t] * (1.0 + signal[t] / 100.0)]), lo, hi)[0])
        elif t + 1 < len(p):
            implied = float(p[t + 1])
        else:
            return None
        return (implied - p[t]) / max(p[t], EPS) * 100.0

    return source


def _context_source(prep: Prepared, cfg: RunConfig):
    scaled = prep.scaled
    peers = cfg.routing.peers(scaled)
    senti = [c for c in cfg.routing.sentiment_columns if c in scaled.columns]
    gepu = cfg.routing.gepu_column if cfg.routing.gepu_column in scaled.columns else None

    def source(t: int) -> PromptContext:
        pr = {c: float((scaled.columns[c][t] - scaled.columns[c][t - 1]) / max(scaled.columns[c][t - 1], EPS)) for c in peers}
        return PromptContext(pr, {c: float(scaled.columns[c][t]) for c in senti}, float(scaled.columns[gepu][t]) if gepu else None)

    return source


@dataclass
class WalkForwardResult:
    report: EvalReport
    records: list[EpisodeRecord]
    val_records: list[EpisodeRecord]
    prepared: Prepared
    meta_initial: MetaClassifier
    meta_final: MetaClassifier
    config: RunConfig


def build_pipeline(prep: Prepared, cfg: RunConfig, variant: str = "full", client: SlmClient | None = None) -> Pipeline:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    semantic = None
    if variant != "no_slm":
        stub = replace(cfg.stub, seed=cfg.seed_for("stub-noise")) if cfg.stub is not None else None
        if stub is None and client is None:
            client = SlmClient(cfg.slm)
        semantic = SemanticChannel(prep.frame.target_column, cfg.window, cfg.ensemble, cfg.slm, client if stub is None else None, stub)
    alpha = 0.0 if variant == "no_lstm" else cfg.alpha
    selector = MetaSelector(
        seed=cfg.seed_for("meta"),
        min_episodes=cfg.meta.min_episodes,
        holdout=cfg.meta.holdout,
        overfit_gap=cfg.meta.overfit_gap,
        retrain_every=cfg.meta.retrain_every,
        max_episodes=cfg.meta.max_episodes,
    )
    dates = [str(d) for d in prep.frame.dates]
    return Pipeline(
        dates,
        prep.scaled.target,
        prep.ml_source(alpha),
        semantic,
        selector,
        truth_source=_truth_source(prep),
        context_source=_context_source(prep, cfg),
        variant=variant,
        tau_max=cfg.tau_max,
        confidence_cap=cfg.meta.confidence_cap,
        vol_window=cfg.indicators.vol_window or 10,
        trend_window=cfg.indicators.corr_window or 30,
    )


def walk_forward(frame: TimeFrame, cfg: RunConfig, prepared: Prepared | None = None, variant: str = "full", client: SlmClient | None = None) -> WalkForwardResult:
    """Chronological train / validation / test protocol; the report covers test steps only."""
    prep = prepared or prepare(frame, cfg)
    split = prep.split
    first = split.n_fit - 1
    if first < cfg.window + cfg.ensemble - 1:
        raise ConfigError(f"window {cfg.window} with ensemble {cfg.ensemble} needs more history than {first} rows")
    pipe = build_pipeline(prep, cfg, variant, client)
    val_records = pipe.run(split.val_origins)
    meta_initial = pipe.selector.refit()
    records = pipe.run(split.test_origins)
    report = build_report(records, cfg, split.as_dict(), variant)
    return WalkForwardResult(report, records, val_records, prep, meta_initial, pipe.selector.classifier, cfg)


def ablate(frame: TimeFrame, variant: str, cfg: RunConfig, prepared: Prepared | None = None) -> EvalReport:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return walk_forward(frame, cfg, prepared, variant).report


SWEEP_AXES = {"window": "window", "ensemble": "ensemble"}


def sensitivity_sweep(frame: TimeFrame, axis: str, values, cfg: RunConfig, prepared: Prepared | None = None) -> list[tuple[int, EvalReport]]:
    """One walk-forward run per value of the prompt window length or ensemble size."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {sorted(SWEEP_AXES)}")
    values = [int(v) for v in values]
    if not values:
        raise ValueError("sweep needs at least one value")
    prep = prepared or prepare(frame, cfg)
    rows = []
    for v in values:
        run_cfg = cfg.with_updates(**{SWEEP_AXES[axis]: v})
        rows.append((v, walk_forward(frame, run_cfg, prep).report))
    return rows


def sweep_table_csv(axis: str, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([axis, "mae", "rmse"])
    for v, rep in rows:
        w.writerow([v, repr(rep.mae), repr(rep.rmse)])
    return buf.getvalue()


# artifacts


def forecasts_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["date", "p_t", "y_hat", "chosen", "calibrated_confidence", "override", "realized"])
    for r in records:
        w.writerow(
            [
                r.date,
                repr(r.p_t),
                "" if r.y_hat is None else repr(r.y_hat),
                r.selected.value if r.selected else "",
                "" if r.calibrated_confidence is None else repr(r.calibrated_confidence),
                r.override,
                "" if r.realized is None else repr(r.realized),
            ]
        )
    return buf.getvalue()


def episodes_jsonl(records) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records)


def read_episodes(path: str | Path) -> list[EpisodeRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [EpisodeRecord.from_dict(json.loads(x)) for x in lines if x.strip()]


def reliability_csv(bins) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lower", "upper", "mean_confidence", "accuracy", "count"])
    for b in bins:
        w.writerow([b.lower, b.upper, repr(b.mean_confidence), repr(b.accuracy), b.count])
    return buf.getvalue()


def model_artifacts(result: WalkForwardResult) -> dict[str, str]:
    """Serialized models fitted before the first test step, keyed by file name."""
    prep = result.prepared
    scaler = {k: list(v) for k, v in prep.scaler.per_column.items()}
    return {
        "scaler.json": prep.scaler.to_json() + "\n",
        "temporal.json": json.dumps(prep.model.to_dict(scaler), sort_keys=True) + "\n",
        "meta_initial.json": json.dumps(result.meta_initial.to_dict(), sort_keys=True) + "\n",
    }


def write_run(result: WalkForwardResult, out_dir: str | Path, prefix: str = "") -> dict[str, Path]:
    out = Path(out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    files = {
        f"{prefix}report.json": result.report.to_json(),
        f"{prefix}forecasts.csv": forecasts_csv(result.records),
        f"{prefix}episodes.jsonl": episodes_jsonl(result.val_records + result.records),
        f"{prefix}reliability.csv": reliability_csv(result.report.reliability_bins),
    }
    files.update({f"models/{k}": v for k, v in model_artifacts(result).items()})
    written = {}
    for name, text in files.items():
        path = out / name
        path.write_text(text, encoding="utf-8")
        written[name] = path
    return written
