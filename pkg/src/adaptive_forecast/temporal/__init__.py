"""Hybrid temporal channel: LSTM sequence regressor blended with a regression forest."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..channels import EPS, Channel, ChannelPrediction, relative_disagreement
from .lstm import LstmNetwork, TrainingError, TrainResult, TrainSpec, lstm_fit, lstm_train
from .trees import Forest, Tree

FORMAT_VERSION = 1

FOREST_TREES = 100
FOREST_MAX_DEPTH = 20
FOREST_MIN_SPLIT = 5
FOREST_MIN_LEAF = 2
FOREST_MAX_FEATURES = 1 / 3

__all__ = [
    "Forest",
    "LstmNetwork",
    "TemporalModel",
    "TrainResult",
    "TrainSpec",
    "TrainingError",
    "Tree",
    "combine_ml",
    "forest_fit",
    "forest_predict",
    "lstm_fit",
    "lstm_train",
    "make_sequences",
]


def make_sequences(features: np.ndarray, target: np.ndarray, L: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample i is feature rows i..i+L-1, labelled with target[i+L]."""
    features = np.asarray(features, dtype=float)
    target = np.asarray(target, dtype=float)
    n = len(features)
    if len(target) != n:
        raise ValueError("features and target differ in length")
    if n < L + 1:
        raise ValueError(f"need at least {L + 1} rows for sequence length {L}, got {n}")
    windows = np.lib.stride_tricks.sliding_window_view(features, L, axis=0)[: n - L]
    return np.ascontiguousarray(windows.transpose(0, 2, 1)), target[L:].copy()


def forest_fit(features, targets, seed: int = 0, n_estimators: int = FOREST_TREES) -> Forest:
    features = np.asarray(features, dtype=float)
    if len(features) == 0:
        raise ValueError("cannot fit a forest on empty data")
    if len(features) < FOREST_MIN_SPLIT:
        raise ValueError(f"need at least {FOREST_MIN_SPLIT} rows to fit a forest")
    return Forest.fit(
        features,
        targets,
        n_estimators=n_estimators,
        max_depth=FOREST_MAX_DEPTH,
        min_samples_split=FOREST_MIN_SPLIT,
        min_samples_leaf=FOREST_MIN_LEAF,
        max_features=FOREST_MAX_FEATURES,
        criterion="mse",
        seed=seed,
    )


def forest_predict(forest: Forest, row) -> float:
    return float(forest.predict(np.asarray(row, dtype=float)[None, :])[0])


def combine_ml(lstm_pred: float, rf_pred: float, alpha: float = 0.7, *, allow_boundary: bool = False) -> ChannelPrediction:
    """Convex blend of the two members with disagreement-derived uncertainty.

    Members are clipped into [EPS, 1] first. ``allow_boundary`` admits alpha of
    exactly 0 or 1, used only by ablations that switch a member off.
    """
    lo_ok = 0.0 <= alpha <= 1.0 if allow_boundary else 0.0 < alpha < 1.0
    if not lo_ok:
        raise ValueError(f"alpha {alpha} outside the open interval (0, 1)")
    raw_zero = lstm_pred <= 0 and rf_pred <= 0
    a = float(np.clip(lstm_pred, EPS, 1.0))
    b = float(np.clip(rf_pred, EPS, 1.0))
    y = alpha * a + (1 - alpha) * b
    u = 1.0 if raw_zero else relative_disagreement(a, b)
    return ChannelPrediction(y, 1.0 - u, u, Channel.ML, {"lstm": a, "rf": b})


@dataclass
class TemporalModel:
    """Trained LSTM + forest pair with the blend weight used at inference."""

    network: LstmNetwork
    forest: Forest
    seq_len: int
    feature_names: list[str]
    alpha: float = 0.7
    train_spec: TrainSpec | None = None

    def member_predictions(self, features: np.ndarray, rows) -> tuple[np.ndarray, np.ndarray]:
        """LSTM and forest outputs for origins ``rows`` (each uses feature rows row-L+1..row)."""
        rows = np.asarray(rows, dtype=int)
        if rows.min() < self.seq_len - 1:
            raise ValueError("origin precedes the first complete sequence")
        seqs = np.stack([features[r - self.seq_len + 1 : r + 1] for r in rows])
        return self.network.predict(seqs), self.forest.predict(features[rows])

    def predict(self, features: np.ndarray, rows, alpha: float | None = None) -> list[ChannelPrediction]:
        alpha = self.alpha if alpha is None else alpha
        lstm_out, rf_out = self.member_predictions(features, rows)
        return [combine_ml(a, b, alpha, allow_boundary=True) for a, b in zip(lstm_out, rf_out)]

    def to_dict(self, scaler: dict | None = None) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "temporal",
            "seq_len": self.seq_len,
            "alpha": self.alpha,
            "feature_names": list(self.feature_names),
            "train_spec": self.train_spec.to_dict() if self.train_spec else None,
            "scaler": scaler,
            "lstm": self.network.to_dict(),
            "forest": self.forest.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> TemporalModel:
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {d.get('format_version')!r}")
        spec = TrainSpec.from_dict(d["train_spec"]) if d.get("train_spec") else None
        return cls(LstmNetwork.from_dict(d["lstm"]), Forest.from_dict(d["forest"]), d["seq_len"], d["feature_names"], d["alpha"], spec)
