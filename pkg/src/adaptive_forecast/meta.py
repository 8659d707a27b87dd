"""Confidence-calibrated meta-selector over the two forecasting channels.

Selection runs a small entropy forest over 12 derived features once enough
resolved episodes exist; before that (or while the forest looks overfit) a
threshold rule decides. Either path yields a raw probability for the chosen
channel, which the piecewise calibration map turns into a capped confidence.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .channels import EPS, Channel, ChannelPrediction, relative_disagreement
from .features import cross_correlation, rolling_volatility
from .temporal.trees import Forest

log = logging.getLogger(__name__)

MIN_EPISODES = 50
HOLDOUT = 0.30
OVERFIT_GAP = 0.15
CONFIDENCE_CAP = 0.85
ACCURACY_WINDOW = 10
META_TREES = 20
META_MAX_DEPTH = 5
META_MIN_SPLIT = 5
META_MIN_LEAF = 2
RULE_HIGH_PROBABILITY = 0.75
RULE_TIEBREAK_PROBABILITY = 0.55


@dataclass(frozen=True)
class MetaFeatures:
    c_slm: float
    c_ml: float
    u_slm: float
    u_ml: float
    disagreement: float
    conf_gap: float
    unc_gap: float
    volatility: float
    trend_strength: float
    acc_slm: float
    acc_ml: float
    momentum: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=float)

    @classmethod
    def from_array(cls, values) -> MetaFeatures:
        return cls(*(float(v) for v in values))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class EpisodeRecord:
    """One walk-forward step. ``realized`` and ``label`` are filled at resolution."""

    origin: int
    date: str
    p_t: float
    slm_pred: ChannelPrediction | None
    ml_pred: ChannelPrediction | None
    features: MetaFeatures | None = None
    selected: Channel | None = None
    y_hat: float | None = None
    raw_probability: float | None = None
    calibrated_confidence: float | None = None
    selection_path: str = "none"
    override: str = "none"
    realized: float | None = None
    label: Channel | None = None
    sanity_flags: list[str] = field(default_factory=list)

    @property
    def resolved(self) -> bool:
        return self.realized is not None

    def resolve(self, realized: float) -> None:
        self.realized = float(realized)
        if self.slm_pred is not None and self.ml_pred is not None:
            self.label = make_label(abs(self.slm_pred.y_hat - realized), abs(self.ml_pred.y_hat - realized))

    def to_dict(self) -> dict:
        return {
            "origin": self.origin,
            "date": self.date,
            "p_t": self.p_t,
            "slm_pred": self.slm_pred.to_dict() if self.slm_pred else None,
            "ml_pred": self.ml_pred.to_dict() if self.ml_pred else None,
            "features": self.features.to_dict() if self.features else None,
            "selected": self.selected.value if self.selected else None,
            "y_hat": self.y_hat,
            "raw_probability": self.raw_probability,
            "calibrated_confidence": self.calibrated_confidence,
            "selection_path": self.selection_path,
            "override": self.override,
            "realized": self.realized,
            "label": self.label.value if self.label else None,
            "sanity_flags": list(self.sanity_flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> EpisodeRecord:
        return cls(
            origin=d["origin"],
            date=d["date"],
            p_t=d["p_t"],
            slm_pred=ChannelPrediction.from_dict(d["slm_pred"]) if d.get("slm_pred") else None,
            ml_pred=ChannelPrediction.from_dict(d["ml_pred"]) if d.get("ml_pred") else None,
            features=MetaFeatures(**d["features"]) if d.get("features") else None,
            selected=Channel(d["selected"]) if d.get("selected") else None,
            y_hat=d.get("y_hat"),
            raw_probability=d.get("raw_probability"),
            calibrated_confidence=d.get("calibrated_confidence"),
            selection_path=d.get("selection_path", "none"),
            override=d.get("override", "none"),
            realized=d.get("realized"),
            label=Channel(d["label"]) if d.get("label") else None,
            sanity_flags=list(d.get("sanity_flags", [])),
        )


def recent_accuracy(history, channel: Channel, window: int = ACCURACY_WINDOW) -> float:
    """Mean of 1 - relative absolute error over the channel's last ``window`` resolved episodes."""
    scores = []
    for rec in reversed(history):
        if len(scores) == window:
            break
        pred = rec.slm_pred if channel is Channel.SLM else rec.ml_pred
        if rec.realized is None or pred is None:
            continue
        rel = abs(pred.y_hat - rec.realized) / max(rec.realized, EPS)
        scores.append(min(max(1.0 - rel, 0.0), 1.0))
    return float(np.mean(scores)) if scores else 0.5


def extract_features(
    slm: ChannelPrediction,
    ml: ChannelPrediction,
    prices,
    history=(),
    *,
    vol_window: int = 10,
    trend_window: int = 30,
) -> MetaFeatures:
    """Build the 12-entry selector input. ``prices`` is the scaled target up to the origin."""
    p = np.asarray(prices, dtype=float)
    vol = 0.0
    if len(p) > vol_window:
        vol = float(rolling_volatility(p[-(vol_window + 1) :], vol_window)[-1])
    trend = 0.0
    tw = min(trend_window, len(p))
    if tw >= 3:
        seg = p[-tw:]
        trend = abs(float(cross_correlation(seg, np.arange(tw, dtype=float), tw)[-1]))
    mom = float((p[-1] - p[-2]) / max(p[-2], EPS)) if len(p) >= 2 else 0.0
    values = [
        slm.confidence,
        ml.confidence,
        slm.uncertainty,
        ml.uncertainty,
        relative_disagreement(slm.y_hat, ml.y_hat),
        abs(slm.confidence - ml.confidence),
        abs(slm.uncertainty - ml.uncertainty),
        vol,
        trend,
        recent_accuracy(history, Channel.SLM),
        recent_accuracy(history, Channel.ML),
        mom,
    ]
    return MetaFeatures(*(v if math.isfinite(v) else 0.0 for v in map(float, values)))


def make_label(slm_err: float, ml_err: float) -> Channel:
    """The channel with strictly lower error; ties go to ML."""
    return Channel.SLM if slm_err < ml_err else Channel.ML


@dataclass
class MetaClassifier:
    forest: Forest | None = None
    trained: bool = False
    train_accuracy: float = math.nan
    val_accuracy: float = math.nan
    val_cross_entropy: float = math.nan
    overfit: bool = False
    n_episodes: int = 0

    @property
    def usable(self) -> bool:
        return self.trained and not self.overfit

    def to_dict(self) -> dict:
        return {
            "trained": self.trained,
            "train_accuracy": None if math.isnan(self.train_accuracy) else self.train_accuracy,
            "val_accuracy": None if math.isnan(self.val_accuracy) else self.val_accuracy,
            "val_cross_entropy": None if math.isnan(self.val_cross_entropy) else self.val_cross_entropy,
            "overfit": self.overfit,
            "n_episodes": self.n_episodes,
            "forest": self.forest.to_dict() if self.forest else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MetaClassifier:
        nan = lambda v: math.nan if v is None else v  # noqa: E731
        return cls(
            Forest.from_dict(d["forest"]) if d.get("forest") else None,
            d["trained"],
            nan(d["train_accuracy"]),
            nan(d["val_accuracy"]),
            nan(d["val_cross_entropy"]),
            d["overfit"],
            d["n_episodes"],
        )


def _labelled(episodes) -> tuple[np.ndarray, np.ndarray]:
    rows = [(e.features.as_array(), 1 if e.label is Channel.SLM else 0) for e in episodes if e.label is not None and e.features is not None]
    if not rows:
        return np.empty((0, 12)), np.empty(0, dtype=int)
    return np.vstack([r[0] for r in rows]), np.array([r[1] for r in rows])


def train_meta(
    episodes,
    holdout: float = HOLDOUT,
    *,
    seed: int = 0,
    min_episodes: int = MIN_EPISODES,
    overfit_gap: float = OVERFIT_GAP,
) -> MetaClassifier:
    """Fit on the chronologically earliest (1 - holdout) episodes, score the rest."""
    X, y = _labelled(episodes)
    n = len(y)
    if n < min_episodes:
        return MetaClassifier(n_episodes=n)
    n_val = max(1, int(round(n * holdout)))
    X_tr, y_tr, X_va, y_va = X[:-n_val], y[:-n_val], X[-n_val:], y[-n_val:]
    if len(np.unique(y_tr)) < 2:
        log.info("meta training set holds a single class; classifier left untrained")
        return MetaClassifier(n_episodes=n)
    forest = Forest.fit(
        X_tr,
        y_tr,
        n_estimators=META_TREES,
        max_depth=META_MAX_DEPTH,
        min_samples_split=META_MIN_SPLIT,
        min_samples_leaf=META_MIN_LEAF,
        max_features=None,
        criterion="entropy",
        seed=seed,
    )
    p_tr = forest.vote_fraction(X_tr, 1)
    p_va = forest.vote_fraction(X_va, 1)
    train_acc = float(((p_tr > 0.5).astype(int) == y_tr).mean())
    val_acc = float(((p_va > 0.5).astype(int) == y_va).mean())
    q = np.clip(p_va, 1e-6, 1 - 1e-6)
    ce = float(-np.mean(y_va * np.log(q) + (1 - y_va) * np.log(1 - q)))
    overfit = train_acc - val_acc > overfit_gap
    if overfit:
        log.info("meta classifier overfit: train %.3f vs validation %.3f", train_acc, val_acc)
    return MetaClassifier(forest, True, train_acc, val_acc, ce, overfit, n)


def select_probability(clf: MetaClassifier, z: MetaFeatures) -> float:
    """P(SLM | z) as the fraction of trees voting SLM."""
    if not clf.trained or clf.forest is None:
        raise ValueError("meta classifier is not trained")
    return float(clf.forest.vote_fraction(z.as_array()[None, :], 1)[0])


def rule_select(slm: ChannelPrediction, ml: ChannelPrediction) -> tuple[Channel, float]:
    if slm.confidence >= 0.9 and slm.uncertainty < 0.2:
        return Channel.SLM, RULE_HIGH_PROBABILITY
    if slm.uncertainty < ml.uncertainty:
        return Channel.SLM, RULE_TIEBREAK_PROBABILITY
    return Channel.ML, RULE_TIEBREAK_PROBABILITY


def calibrate(p_raw: float, c_slm: float, c_ml: float, cap: float = CONFIDENCE_CAP) -> float:
    """Regime-dependent affine map of the raw probability, capped at ``cap`` and floored at 0."""
    c_bar = (c_slm + c_ml) / 2.0
    if c_bar < 0.6:
        p = 0.4 + 0.2 * (p_raw - 0.5)
    elif c_bar < 0.8:
        p = 0.3 + 0.4 * p_raw
    else:
        p = 0.2 + 0.6 * p_raw
    return min(max(p, 0.0), cap)


@dataclass
class MetaSelector:
    """Holds the resolved-episode store and the current classifier snapshot.

    The classifier is refit every ``retrain_every`` newly resolved episodes on
    at most the ``max_episodes`` most recent ones.
    """

    seed: int = 0
    min_episodes: int = MIN_EPISODES
    holdout: float = HOLDOUT
    overfit_gap: float = OVERFIT_GAP
    retrain_every: int = 25
    max_episodes: int = 500
    classifier: MetaClassifier = field(default_factory=MetaClassifier)
    history: list[EpisodeRecord] = field(default_factory=list)
    _since_fit: int = 0

    def choose(self, z: MetaFeatures, slm: ChannelPrediction, ml: ChannelPrediction) -> tuple[Channel, float, str]:
        """(channel, raw probability of that channel, path tag)."""
        if self.classifier.usable:
            p_slm = select_probability(self.classifier, z)
            if p_slm > 0.5:
                return Channel.SLM, p_slm, "classifier"
            return Channel.ML, 1.0 - p_slm, "classifier"
        ch, p = rule_select(slm, ml)
        return ch, p, "rule"

    def add_resolved(self, record: EpisodeRecord) -> None:
        self.history.append(record)
        self._since_fit += 1
        if self._since_fit >= self.retrain_every:
            self.refit()

    def refit(self) -> MetaClassifier:
        self._since_fit = 0
        window = self.history[-self.max_episodes :]
        snapshot = train_meta(window, self.holdout, seed=self.seed, min_episodes=self.min_episodes, overfit_gap=self.overfit_gap)
        self.classifier = snapshot
        return snapshot
