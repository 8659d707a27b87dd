"""Dual-channel prompt construction: a six-decimal price list plus a templated narrative."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..channels import EPS

log = logging.getLogger(__name__)

SYSTEM_PROMPT = (
    "You are a quantitative market analyst. You receive min-max scaled closing prices "
    "and a short market narrative, and you forecast the next-step return of the asset."
)
RESPONSE_INSTRUCTION = (
    "Reply with exactly one line in the form\n"
    "PREDICTION: <signed percent return for the next step>% CONFIDENCE: <number between 0 and 1>\n"
    'or the JSON object {"prediction_pct": <number>, "confidence": <number>}.'
)


@dataclass(frozen=True)
class PromptContext:
    """Market state at the window end: peer last-step returns, sentiment levels, GEPU level."""

    peers: dict[str, float] = field(default_factory=dict)
    sentiment: dict[str, float] = field(default_factory=dict)
    gepu: float | None = None


@dataclass(frozen=True)
class PromptBundle:
    numeric_channel: str
    semantic_channel: str
    window_id: int
    delta_pct: float
    sigma: float

    def messages(self) -> list[dict[str, str]]:
        user = f"{self.numeric_channel}\n\n{self.semantic_channel}"
        return [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": user}]


def build_windows(n_prices: int, t: int, w: int = 8, K: int = 3) -> list[tuple[int, int]]:
    """K inclusive index ranges of length w ending at t, t-1, ..., t-K+1."""
    if w < 2 or K < 1:
        raise ValueError("window length must be >= 2 and ensemble size >= 1")
    if t < w + K - 1:
        raise ValueError(f"origin {t} has too little history for w={w}, K={K}")
    if t >= n_prices:
        raise ValueError(f"origin {t} beyond series of length {n_prices}")
    return [(t - k - w + 1, t - k) for k in range(K)]


def window_stats(window) -> tuple[float, float]:
    """(last-step percent change, sample std of in-window simple returns)."""
    p = np.asarray(window, dtype=float)
    delta = (p[-1] - p[-2]) / max(p[-2], EPS) * 100.0
    r = (p[1:] - p[:-1]) / np.maximum(p[:-1], EPS)
    sigma = float(np.std(r, ddof=1)) if len(r) >= 2 else 0.0
    return float(delta), sigma


def _direction(x: float, tol: float = 1e-4) -> str:
    if x > tol:
        return "rising"
    if x < -tol:
        return "falling"
    return "flat"


def _cross_asset_line(peers: dict[str, float]) -> str | None:
    if not peers:
        return None
    up = sorted(k for k, v in peers.items() if v > 1e-4)
    down = sorted(k for k, v in peers.items() if v < -1e-4)
    parts = [f"{len(up)} of {len(peers)} related assets rising"]
    if up:
        parts.append("up: " + ", ".join(up))
    if down:
        parts.append("down: " + ", ".join(down))
    return "Cross-asset signals: " + "; ".join(parts) + "."


def _sentiment_line(sentiment: dict[str, float], gepu: float | None) -> str | None:
    items = [f"{k} at {v:.2f} ({'elevated' if v > 0.66 else 'subdued' if v < 0.33 else 'neutral'})" for k, v in sorted(sentiment.items())]
    if gepu is not None:
        items.append(f"policy uncertainty index at {gepu:.2f} ({'high' if gepu > 0.66 else 'low' if gepu < 0.33 else 'moderate'})")
    if not items:
        return None
    return "Sentiment: " + "; ".join(items) + "."


def build_prompt(window, context: PromptContext | None, asset: str, window_id: int = 0) -> PromptBundle:
    p = np.asarray(window, dtype=float)
    if len(p) < 2:
        raise ValueError("prompt window needs at least two prices")
    numeric = f"Scaled closing prices of {asset}, oldest to newest: " + ", ".join(f"{x:.6f}" for x in p)
    delta, sigma = window_stats(p)
    lines = [
        f"Market narrative for {asset}: the last step moved {delta:.2f}% "
        f"({_direction(delta / 100)}) with window volatility {sigma:.4f}."
    ]
    context = context or PromptContext()
    cross = _cross_asset_line(context.peers)
    if cross is None:
        log.debug("no cross-asset context for %s; clause omitted", asset)
    else:
        lines.append(cross)
    senti = _sentiment_line(context.sentiment, context.gepu)
    if senti is None:
        log.debug("no sentiment context for %s; clause omitted", asset)
    else:
        lines.append(senti)
    lines.append(RESPONSE_INSTRUCTION)
    return PromptBundle(numeric, "\n".join(lines), window_id, delta, sigma)
