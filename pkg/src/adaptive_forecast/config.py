"""Run configuration: one JSON document, every constant overridable, validated up front."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .features import FeatureRouting, IndicatorConfig
from .ingest import FILL_POLICIES
from .integrate import VARIANTS
from .semantic import SlmClientConfig, StubConfig
from .temporal import TrainSpec


class ConfigError(ValueError):
    pass


def sub_seed(master: int, name: str) -> int:
    """Stable 32-bit seed for a named component derived from the master seed."""
    digest = hashlib.sha256(f"{master}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass(frozen=True)
class MetaParams:
    min_episodes: int = 50
    holdout: float = 0.30
    overfit_gap: float = 0.15
    confidence_cap: float = 0.85
    retrain_every: int = 25
    max_episodes: int = 500


@dataclass(frozen=True)
class RunConfig:
    data: tuple[str, ...] = ()
    gepu: str | None = None
    target: str = "target"
    date_column: str = "date"
    fill_policy: str = "forward-fill"
    indicators: IndicatorConfig = field(default_factory=IndicatorConfig)
    routing: FeatureRouting = field(default_factory=FeatureRouting)
    train: TrainSpec = field(default_factory=lambda: TrainSpec(patience=25))
    slm: SlmClientConfig = field(default_factory=SlmClientConfig)
    stub: StubConfig | None = None
    meta: MetaParams = field(default_factory=MetaParams)
    tau_max: float = 0.5
    alpha: float = 0.7
    window: int = 8
    ensemble: int = 3
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    protocol: str = "split"
    forward_context: int | None = None
    correctness_threshold: float = 0.05
    reliability_bins: int = 10
    seed: int = 0
    out: str = "out"

    def seed_for(self, name: str) -> int:
        return sub_seed(self.seed, name)

    def validate(self) -> RunConfig:
        checks = [
            (0 < self.tau_max <= 1, "tau_max must lie in (0, 1]"),
            (0 < self.alpha < 1, "alpha must lie in (0, 1)"),
            (self.window >= 2, "window must be >= 2"),
            (self.ensemble >= 1, "ensemble must be >= 1"),
            (0 < self.train_fraction < 1, "train_fraction must lie in (0, 1)"),
            (0 < self.val_fraction <= 0.5, "val_fraction must lie in (0, 0.5]"),
            (self.protocol in ("split", "forward"), "protocol must be 'split' or 'forward'"),
            (self.protocol != "forward" or (self.forward_context or 0) > 0, "forward protocol needs forward_context > 0"),
            (0 < self.correctness_threshold < 1, "correctness_threshold must lie in (0, 1)"),
            (self.reliability_bins >= 1, "reliability_bins must be >= 1"),
            (self.fill_policy in FILL_POLICIES, f"fill_policy must be one of {FILL_POLICIES}"),
            (0 < self.meta.confidence_cap <= 1, "meta.confidence_cap must lie in (0, 1]"),
            (0 < self.meta.holdout < 1, "meta.holdout must lie in (0, 1)"),
            (self.meta.min_episodes >= 2, "meta.min_episodes must be >= 2"),
            (0 <= self.meta.overfit_gap <= 1, "meta.overfit_gap must lie in [0, 1]"),
            (self.meta.retrain_every >= 1 and self.meta.max_episodes >= self.meta.min_episodes, "meta retrain settings invalid"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def to_dict(self) -> dict:
        return {
            "data": list(self.data),
            "gepu": self.gepu,
            "target": self.target,
            "date_column": self.date_column,
            "fill_policy": self.fill_policy,
            "indicators": self.indicators.to_dict(),
            "routing": {
                "gepu_column": self.routing.gepu_column,
                "sentiment_columns": list(self.routing.sentiment_columns),
                "hidden_columns": list(self.routing.hidden_columns),
            },
            "train": self.train.to_dict(),
            "slm": self.slm.to_dict(),
            "stub": self.stub.to_dict() if self.stub else None,
            "meta": dict(self.meta.__dict__),
            **{k: getattr(self, k) for k in _SCALARS},
        }

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kw = {k: d[k] for k in _SCALARS if k in d}
            if "data" in d:
                kw["data"] = tuple([d["data"]] if isinstance(d["data"], str) else d["data"])
            for k in ("gepu", "target", "date_column", "fill_policy"):
                if k in d:
                    kw[k] = d[k]
            if "indicators" in d:
                kw["indicators"] = IndicatorConfig.from_dict(d["indicators"])
            if "routing" in d:
                r = d["routing"]
                kw["routing"] = FeatureRouting(
                    r.get("gepu_column", "gepu"), tuple(r.get("sentiment_columns", ())), tuple(r.get("hidden_columns", ("semantic_signal",)))
                )
            if "train" in d:
                kw["train"] = TrainSpec.from_dict({**TrainSpec(patience=25).to_dict(), **d["train"]})
            if "slm" in d:
                kw["slm"] = SlmClientConfig(**d["slm"])
            if d.get("stub"):
                kw["stub"] = StubConfig(**d["stub"])
            if "meta" in d:
                kw["meta"] = MetaParams(**d["meta"])
            return cls(**kw).validate()
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None

    def with_updates(self, **changes) -> RunConfig:
        return replace(self, **changes).validate()


_SCALARS = (
    "tau_max",
    "alpha",
    "window",
    "ensemble",
    "train_fraction",
    "val_fraction",
    "protocol",
    "forward_context",
    "correctness_threshold",
    "reliability_bins",
    "seed",
    "out",
)

__all__ = ["ConfigError", "MetaParams", "RunConfig", "VARIANTS", "sub_seed"]
