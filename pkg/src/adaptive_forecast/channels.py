"""Channel tags and the per-channel forecast record shared by both predictors."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

EPS = 1e-8


class Channel(str, Enum):
    SLM = "SLM"
    ML = "ML"
    BLEND = "BLEND"  # static 50/50 average, only produced by the no_meta ablation

    def other(self) -> Channel:
        if self is Channel.BLEND:
            raise ValueError("BLEND has no counterpart")
        return Channel.ML if self is Channel.SLM else Channel.SLM


@dataclass(frozen=True)
class ChannelPrediction:
    """A channel's next-step scaled price with its confidence and uncertainty."""

    y_hat: float
    confidence: float
    uncertainty: float
    source: Channel
    parts: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "y_hat": self.y_hat,
            "confidence": self.confidence,
            "uncertainty": self.uncertainty,
            "source": self.source.value,
            "parts": dict(self.parts),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ChannelPrediction:
        return cls(
            float(d["y_hat"]),
            float(d["confidence"]),
            float(d["uncertainty"]),
            Channel(d["source"]),
            {k: float(v) for k, v in d.get("parts", {}).items()},
        )


def relative_disagreement(a: float, b: float) -> float:
    """|a - b| / max(a, b), denominator floored at EPS, clipped to [0, 1]."""
    return float(min(abs(a - b) / max(a, b, EPS), 1.0))
