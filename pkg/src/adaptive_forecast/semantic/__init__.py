"""Semantic channel: K staggered prompt windows, model or stub queries, confidence-weighted ensemble."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..channels import Channel, ChannelPrediction
from .client import (
    ParseError,
    ReplayLog,
    SlmClient,
    SlmClientConfig,
    SlmResponse,
    build_request,
    parse_response,
    query_slm,
)
from .prompt import PromptBundle, PromptContext, build_prompt, build_windows, window_stats
from .stub import STUB_MODES, StubConfig, stub_oracle

__all__ = [
    "ParseError",
    "PromptBundle",
    "PromptContext",
    "ReplayLog",
    "STUB_MODES",
    "SemanticChannel",
    "SlmClient",
    "SlmClientConfig",
    "SlmResponse",
    "StubConfig",
    "build_prompt",
    "build_request",
    "build_windows",
    "ensemble_slm",
    "parse_response",
    "query_slm",
    "stub_oracle",
    "window_stats",
]


def ensemble_slm(responses, p_t: float) -> ChannelPrediction | None:
    """Confidence-weighted return ensemble mapped to a scaled price.

    ``responses`` holds (return_pct, confidence) pairs or SlmResponse objects;
    failed entries are dropped. Returns None when nothing usable remains.
    """
    pairs = []
    for r in responses:
        if isinstance(r, SlmResponse):
            if r.ok:
                pairs.append((r.return_pct, r.confidence))
        else:
            pairs.append((float(r[0]), float(r[1])))
    if not pairs:
        return None
    rets = np.array([p[0] for p in pairs])
    confs = np.array([p[1] for p in pairs])
    weight = confs.sum()
    if not weight > 0:
        return None
    r_hat = float((confs * rets).sum() / weight)
    c = float(confs.mean())
    u = 1.0 - min(c, 1.0)
    y = p_t if r_hat == 0 else float(np.clip(p_t * (1.0 + r_hat / 100.0), 0.0, 1.0))
    parts = {f"r{k}": float(v) for k, v in enumerate(rets)}
    parts["return_pct"] = r_hat
    return ChannelPrediction(y, c, u, Channel.SLM, parts)


@dataclass
class SemanticChannel:
    """Runs the K window queries for one origin. Exactly one of ``client``/``stub`` is used."""

    asset: str
    w: int = 8
    K: int = 3
    client_cfg: SlmClientConfig | None = None
    client: SlmClient | None = None
    stub: StubConfig | None = None

    def __post_init__(self) -> None:
        if self.stub is None and self.client is None:
            raise ValueError("semantic channel needs a client or a stub")
        seed = self.stub.seed if self.stub is not None else 0
        self._rng = np.random.default_rng(seed)

    def reset(self) -> None:
        self.__post_init__()

    def responses(self, prices, t: int, context: PromptContext | None = None, truth_pct: float | None = None) -> list[SlmResponse]:
        prices = np.asarray(prices, dtype=float)
        out = []
        for k, (lo, hi) in enumerate(build_windows(len(prices), t, self.w, self.K)):
            window = prices[lo : hi + 1]
            if self.stub is not None:
                sigma = self.stub.sigma_for_window(self.w)
                out.append(stub_oracle(window, self.stub.mode, truth_pct, sigma=sigma, rng=self._rng))
            else:
                bundle = build_prompt(window, context, self.asset, window_id=k)
                out.append(query_slm(bundle, self.client_cfg or self.client.cfg, self.client))
        return out

    def predict(self, prices, t: int, context: PromptContext | None = None, truth_pct: float | None = None):
        """(ChannelPrediction or None, raw responses) for origin ``t``."""
        responses = self.responses(prices, t, context, truth_pct)
        return ensemble_slm(responses, float(np.asarray(prices)[t])), responses
