"""Sanity validation, final channel decision, and the per-step orchestration."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .channels import EPS, Channel, ChannelPrediction
from .meta import CONFIDENCE_CAP, EpisodeRecord, MetaSelector, calibrate, extract_features
from .semantic import PromptContext, SemanticChannel

log = logging.getLogger(__name__)

TAU_MAX = 0.5
VARIANTS = ("full", "no_slm", "no_lstm", "no_uncertainty", "no_meta")


class Override:
    NONE = "none"
    SANITY = "sanity-override"
    UNAVAILABLE = "channel-unavailable"
    CAPPED = "capped"
    SKIPPED = "skipped"


@dataclass(frozen=True)
class SanityVerdict:
    in_bounds: bool
    within_step: bool
    relative_deviation: float

    @property
    def valid(self) -> bool:
        return self.in_bounds and self.within_step


@dataclass(frozen=True)
class FinalForecast:
    y_hat: float
    chosen: Channel
    calibrated_confidence: float
    override: str
    p_t: float

    @property
    def deviation(self) -> float:
        return abs(self.y_hat - self.p_t) / max(self.p_t, EPS)


def sanity_check(y_hat: float, p_t: float, tau_max: float = TAU_MAX) -> SanityVerdict:
    dev = abs(y_hat - p_t) / max(p_t, EPS)
    return SanityVerdict(0.0 <= y_hat <= 1.0, dev <= tau_max, dev)


def cap_move(y_hat: float, p_t: float, tau_max: float = TAU_MAX) -> float:
    """Limit the move from p_t to tau_max * p_t in the predicted direction, then clip to [0, 1]."""
    ref = max(p_t, EPS)
    move = y_hat - p_t
    capped = p_t + math.copysign(min(abs(move), tau_max * ref), move)
    return min(max(capped, 0.0), 1.0)


def decide(
    slm: ChannelPrediction | None,
    ml: ChannelPrediction | None,
    meta_choice: Channel,
    calibrated: float,
    p_t: float,
    tau_max: float = TAU_MAX,
) -> FinalForecast | None:
    """Apply the selection/sanity case structure; None only when both channels are missing."""
    preds = {Channel.SLM: slm, Channel.ML: ml}
    available = [ch for ch, pr in preds.items() if pr is not None]
    if not available:
        return None
    verdicts = {ch: sanity_check(preds[ch].y_hat, p_t, tau_max) for ch in available}
    if len(available) == 1:
        ch = available[0]
        if verdicts[ch].valid:
            return FinalForecast(preds[ch].y_hat, ch, calibrated, Override.UNAVAILABLE, p_t)
    else:
        if verdicts[meta_choice].valid:
            return FinalForecast(preds[meta_choice].y_hat, meta_choice, calibrated, Override.NONE, p_t)
        other = meta_choice.other()
        if verdicts[other].valid:
            return FinalForecast(preds[other].y_hat, other, calibrated, Override.SANITY, p_t)
    # every available channel failed: smallest relative deviation, then cap (ties keep the meta choice)
    order = sorted(available, key=lambda ch: (verdicts[ch].relative_deviation, ch is not meta_choice))
    ch = order[0]
    return FinalForecast(cap_move(preds[ch].y_hat, p_t, tau_max), ch, calibrated, Override.CAPPED, p_t)


def decide_blend(slm: ChannelPrediction | None, ml: ChannelPrediction | None, calibrated: float, p_t: float, tau_max: float = TAU_MAX) -> FinalForecast | None:
    """Static 50/50 price average used when arbitration is ablated; sanity rules still apply."""
    if slm is None and ml is None:
        return None
    if slm is None or ml is None:
        return decide(slm, ml, Channel.ML if slm is None else Channel.SLM, calibrated, p_t, tau_max)
    y = 0.5 * (slm.y_hat + ml.y_hat)
    if sanity_check(y, p_t, tau_max).valid:
        return FinalForecast(y, Channel.BLEND, calibrated, Override.NONE, p_t)
    return FinalForecast(cap_move(y, p_t, tau_max), Channel.BLEND, calibrated, Override.CAPPED, p_t)


def _certain(pred: ChannelPrediction | None) -> ChannelPrediction | None:
    return None if pred is None else replace(pred, confidence=1.0, uncertainty=0.0)


@dataclass
class Pipeline:
    """Walk-forward state: channel sources, the meta-selector and the episode log.

    ``ml_source(t)`` and ``truth_source(t)`` are callables keyed by origin row
    index into ``prices`` (the scaled target); ``truth_source`` is consulted only
    by the stub and may return None for origins without a next value.
    """

    dates: list[str]
    prices: np.ndarray
    ml_source: Callable[[int], ChannelPrediction | None]
    semantic: SemanticChannel | None
    selector: MetaSelector
    truth_source: Callable[[int], float | None] = lambda t: None
    context_source: Callable[[int], PromptContext | None] = lambda t: None
    variant: str = "full"
    tau_max: float = TAU_MAX
    confidence_cap: float = CONFIDENCE_CAP
    vol_window: int = 10
    trend_window: int = 30

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        self.prices = np.asarray(self.prices, dtype=float)
        self.records: list[EpisodeRecord] = []

    def _slm(self, t: int, flags: list[str]) -> ChannelPrediction | None:
        if self.variant == "no_slm" or self.semantic is None:
            return None
        try:
            pred, responses = self.semantic.predict(self.prices[: t + 1], t, self.context_source(t), self.truth_source(t))
        except Exception as exc:  # a failing channel must not stop the loop
            log.warning("semantic channel failed at origin %d: %s", t, exc)
            flags.append(f"slm-error: {exc}")
            return None
        failures = [r.error for r in responses if not r.ok]
        if failures:
            flags.append(f"slm-windows-failed: {len(failures)}/{len(responses)}")
        if pred is None:
            flags.append("slm-unavailable")
        return pred

    def _ml(self, t: int, flags: list[str]) -> ChannelPrediction | None:
        try:
            pred = self.ml_source(t)
        except Exception as exc:
            log.warning("temporal channel failed at origin %d: %s", t, exc)
            flags.append(f"ml-error: {exc}")
            return None
        if pred is None:
            flags.append("ml-unavailable")
        return pred

    def step(self, t: int) -> EpisodeRecord:
        """Forecast prices[t + 1] from information up to row t and log the episode."""
        flags: list[str] = []
        p_t = float(self.prices[t])
        slm = self._slm(t, flags)
        ml = self._ml(t, flags)
        if self.variant == "no_uncertainty":
            slm, ml = _certain(slm), _certain(ml)
        rec = EpisodeRecord(t, self.dates[t], p_t, slm, ml, sanity_flags=flags)

        if slm is not None and ml is not None:
            rec.features = extract_features(
                slm, ml, self.prices[: t + 1], self.selector.history, vol_window=self.vol_window, trend_window=self.trend_window
            )
            if self.variant == "no_meta":
                p_raw, path, choice = 0.5, "static", Channel.ML
            else:
                choice, p_raw, path = self.selector.choose(rec.features, slm, ml)
            cal = calibrate(p_raw, slm.confidence, ml.confidence, self.confidence_cap)
        else:
            survivor = slm or ml
            choice = Channel.SLM if slm is not None else Channel.ML
            p_raw, path = 0.5, "bypass"
            cal = calibrate(p_raw, survivor.confidence, survivor.confidence, self.confidence_cap) if survivor else None

        if self.variant == "no_meta":
            final = decide_blend(slm, ml, cal, p_t, self.tau_max)
        else:
            final = decide(slm, ml, choice, cal, p_t, self.tau_max)

        rec.raw_probability = p_raw
        rec.selection_path = path
        if final is None:
            rec.override = Override.SKIPPED
            flags.append("no-forecast")
        else:
            rec.y_hat = final.y_hat
            rec.selected = final.chosen
            rec.calibrated_confidence = final.calibrated_confidence
            rec.override = final.override
            if final.override in (Override.SANITY, Override.CAPPED):
                flags.append(f"sanity: {final.override}")
        self.records.append(rec)
        return rec

    def resolve(self, record: EpisodeRecord, realized: float | None = None) -> None:
        """Fill the realized value (default: the next scaled price) and feed the selector."""
        if realized is None:
            if record.origin + 1 >= len(self.prices):
                return
            realized = float(self.prices[record.origin + 1])
        record.resolve(realized)
        self.selector.add_resolved(record)

    def run(self, origins, resolve: bool = True) -> list[EpisodeRecord]:
        out = []
        for t in origins:
            rec = self.step(int(t))
            if resolve:
                self.resolve(rec)
            out.append(rec)
        return out
