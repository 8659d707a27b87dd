"""Deterministic stand-in for the language model, driven by harness-supplied truth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..channels import EPS
from .client import MAX_ABS_RETURN_PCT, SlmResponse

STUB_MODES = ("perfect", "noisy", "momentum")
PERFECT_CONFIDENCE = 0.95
MOMENTUM_CONFIDENCE = 0.6


@dataclass(frozen=True)
class StubConfig:
    """``sigma`` is the noise std in percent-return units for ``noisy`` mode.

    When ``sigma_window_optimum`` is set, the noise grows with the distance of
    the prompt window length from that optimum:
    sigma_w = sigma * (1 + ((w - w_opt) / w_opt) ** 2).
    """

    mode: str = "perfect"
    sigma: float = 0.0
    seed: int = 0
    sigma_window_optimum: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in STUB_MODES:
            raise ValueError(f"stub mode {self.mode!r} not in {STUB_MODES}")
        if self.sigma < 0:
            raise ValueError("stub noise sigma must be >= 0")

    def sigma_for_window(self, w: int) -> float:
        if self.sigma_window_optimum is None:
            return self.sigma
        return self.sigma * (1.0 + ((w - self.sigma_window_optimum) / self.sigma_window_optimum) ** 2)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def stub_oracle(
    window,
    mode: str,
    truth_pct: float | None = None,
    *,
    sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> SlmResponse:
    """Simulated (return %, confidence) for one prompt window.

    ``perfect`` echoes the supplied next-step truth at confidence 0.95, ``noisy``
    adds N(0, sigma) to it, ``momentum`` repeats the window's last-step return
    at confidence 0.6. Without truth, the truth-driven modes fail.
    """
    if mode not in STUB_MODES:
        raise ValueError(f"stub mode {mode!r} not in {STUB_MODES}")
    if mode == "momentum":
        p = np.asarray(window, dtype=float)
        ret = (p[-1] - p[-2]) / max(p[-2], EPS) * 100.0
        conf = MOMENTUM_CONFIDENCE
    else:
        if truth_pct is None or not math.isfinite(truth_pct):
            return SlmResponse.failed("stub has no truth for this step")
        ret = float(truth_pct)
        if mode == "noisy" and sigma > 0:
            ret += float((rng or np.random.default_rng(0)).normal(0.0, sigma))
        conf = PERFECT_CONFIDENCE
    text = f"PREDICTION: {ret:.6f}% CONFIDENCE: {conf}"
    if abs(ret) > MAX_ABS_RETURN_PCT:
        return SlmResponse.failed("out-of-range prediction", text)
    return SlmResponse(float(ret), conf, text)
