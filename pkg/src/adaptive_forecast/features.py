"""Technical indicator suite on scaled series and assembly of the feature matrix.

All indicators are causal: the value at index t reads inputs at indices <= t.
Entries inside an indicator's lookback are NaN.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from .ingest import TimeFrame

EPS = 1e-8


@dataclass(frozen=True)
class IndicatorConfig:
    momentum_lags: tuple[int, ...] = (1, 2, 3, 5, 7)
    sma_windows: tuple[int, ...] = (5, 10, 20)
    ema_windows: tuple[int, ...] = (5, 10, 20)
    vol_window: int | None = 10
    rsi_period: int | None = 14
    bollinger: tuple[int, float] | None = (20, 2.0)
    corr_window: int | None = 30
    gepu_lags: tuple[int, ...] = (0, 1, 3, 7)

    def __post_init__(self) -> None:
        windows = [*self.momentum_lags, *self.sma_windows, *self.ema_windows]
        windows += [w for w in (self.vol_window, self.rsi_period, self.corr_window) if w is not None]
        if self.bollinger is not None:
            windows.append(self.bollinger[0])
            if not self.bollinger[1] > 0:
                raise ValueError("Bollinger width multiplier must be > 0")
        if any(int(w) < 1 for w in windows) or any(int(k) < 0 for k in self.gepu_lags):
            raise ValueError("indicator windows and lags must be >= 1 (GEPU lags >= 0)")

    @classmethod
    def empty(cls) -> IndicatorConfig:
        return cls((), (), (), None, None, None, None, ())

    def lookback(self, has_peers: bool = True, has_gepu: bool = True) -> int:
        """Rows consumed before every configured indicator is defined."""
        spans = [0, *self.momentum_lags, *self.sma_windows, *self.ema_windows]
        spans += [w for w in (self.vol_window, self.rsi_period) if w is not None]
        if self.bollinger is not None:
            spans.append(self.bollinger[0])
        if has_peers and self.corr_window is not None:
            spans.append(self.corr_window)
        if has_gepu and self.gepu_lags:
            spans.append(max(self.gepu_lags))
        return int(max(spans))

    def to_dict(self) -> dict:
        return {
            "momentum_lags": list(self.momentum_lags),
            "sma_windows": list(self.sma_windows),
            "ema_windows": list(self.ema_windows),
            "vol_window": self.vol_window,
            "rsi_period": self.rsi_period,
            "bollinger": list(self.bollinger) if self.bollinger else None,
            "corr_window": self.corr_window,
            "gepu_lags": list(self.gepu_lags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> IndicatorConfig:
        base = cls().to_dict()
        unknown = set(d) - set(base)
        if unknown:
            raise ValueError(f"unknown indicator keys: {sorted(unknown)}")
        base.update(d)
        boll = base["bollinger"]
        return cls(
            tuple(int(k) for k in base["momentum_lags"]),
            tuple(int(k) for k in base["sma_windows"]),
            tuple(int(k) for k in base["ema_windows"]),
            base["vol_window"],
            base["rsi_period"],
            (int(boll[0]), float(boll[1])) if boll else None,
            base["corr_window"],
            tuple(int(k) for k in base["gepu_lags"]),
        )


@dataclass(frozen=True)
class FeatureRouting:
    """Which frame columns play which role.

    ``hidden_columns`` never reach the temporal feature matrix (e.g. the
    synthetic semantic side channel). Sentiment columns feed the matrix and the
    prompt narrative but are not treated as tradable peers for correlation.
    """

    gepu_column: str | None = "gepu"
    sentiment_columns: tuple[str, ...] = ()
    hidden_columns: tuple[str, ...] = ("semantic_signal",)

    def peers(self, frame: TimeFrame) -> list[str]:
        skip = {frame.target_column, self.gepu_column, *self.sentiment_columns, *self.hidden_columns}
        return [c for c in frame.columns if c not in skip]


@dataclass(frozen=True)
class FeatureMatrix:
    dates: np.ndarray
    names: list[str]
    values: np.ndarray  # rows = dates, cols = names
    warmup: int

    def __post_init__(self) -> None:
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        if self.values.shape != (len(self.dates), len(self.names)):
            raise ValueError("feature values do not match dates x names")

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def to_csv(self, path: str | Path) -> None:
        df = pd.DataFrame(self.values, columns=self.names)
        df.insert(0, "date", pd.DatetimeIndex(self.dates).strftime("%Y-%m-%d"))
        df.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def _series(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def momentum(series, k: int) -> np.ndarray:
    p = _series(series)
    if k < 1 or k >= len(p):
        raise ValueError(f"momentum lag {k} must be in [1, {len(p) - 1}]")
    out = np.full_like(p, np.nan)
    prev = p[:-k]
    out[k:] = (p[k:] - prev) / np.maximum(prev, EPS)
    return out


def sma(series, window: int) -> np.ndarray:
    p = _series(series)
    if window <= 0:
        raise ValueError("window must be positive")
    if window > len(p):
        raise ValueError(f"window {window} exceeds series length {len(p)}")
    out = np.full_like(p, np.nan)
    out[window - 1 :] = sliding_window_view(p, window).mean(axis=1)
    return out


def ema(series, window: int) -> np.ndarray:
    p = _series(series)
    if window <= 0:
        raise ValueError("window must be positive")
    if window > len(p):
        raise ValueError(f"window {window} exceeds series length {len(p)}")
    alpha = 2.0 / (window + 1)
    out = np.empty_like(p)
    out[0] = p[0]
    for t in range(1, len(p)):
        out[t] = alpha * p[t] + (1 - alpha) * out[t - 1]
    return out


def simple_returns(series) -> np.ndarray:
    p = _series(series)
    r = np.full_like(p, np.nan)
    r[1:] = (p[1:] - p[:-1]) / np.maximum(p[:-1], EPS)
    return r


def _rolling_std(x: np.ndarray, window: int, start: int) -> np.ndarray:
    out = np.full_like(x, np.nan)
    if len(x) - start >= window:
        out[start + window - 1 :] = sliding_window_view(x[start:], window).std(axis=1, ddof=1)
    return out


def rolling_volatility(series, window: int) -> np.ndarray:
    """Sample std of the last ``window`` simple returns."""
    if window < 2:
        raise ValueError("volatility window must be >= 2")
    p = _series(series)
    if window >= len(p):
        raise ValueError(f"volatility window {window} needs more than {len(p)} points")
    return _rolling_std(simple_returns(p), window, start=1)


def rsi(series, period: int = 14) -> np.ndarray:
    """Wilder RSI in [0, 100]; a window with no moves at all reads 50."""
    if period < 1:
        raise ValueError("RSI period must be >= 1")
    p = _series(series)
    out = np.full_like(p, np.nan)
    if len(p) <= period:
        return out
    delta = np.diff(p)
    gain = np.clip(delta, 0, None)
    loss = np.clip(-delta, 0, None)
    avg_g = gain[:period].mean()
    avg_l = loss[:period].mean()
    for t in range(period, len(p)):
        if t > period:
            avg_g = (avg_g * (period - 1) + gain[t - 1]) / period
            avg_l = (avg_l * (period - 1) + loss[t - 1]) / period
        if avg_l == 0:
            out[t] = 50.0 if avg_g == 0 else 100.0
        else:
            out[t] = 100.0 - 100.0 / (1.0 + avg_g / avg_l)
    return out


def bollinger(series, window: int = 20, width: float = 2.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if window < 2:
        raise ValueError("Bollinger window must be >= 2")
    p = _series(series)
    mid = sma(p, window)
    sd = _rolling_std(p, window, start=0)
    upper = mid + width * sd
    lower = mid - width * sd
    bandwidth = (upper - lower) / np.maximum(mid, EPS)
    return upper, lower, bandwidth


def cross_correlation(series_i, series_j, window: int = 30) -> np.ndarray:
    """Trailing-window Pearson correlation; a constant window yields 0."""
    a, b = _series(series_i), _series(series_j)
    if a.shape != b.shape:
        raise ValueError("series lengths differ")
    if window < 3:
        raise ValueError("correlation window must be >= 3")
    out = np.full_like(a, np.nan)
    if len(a) < window:
        return out
    x = sliding_window_view(a, window)
    y = sliding_window_view(b, window)
    dx = x - x.mean(axis=1, keepdims=True)
    dy = y - y.mean(axis=1, keepdims=True)
    sx = np.sqrt((dx * dx).sum(axis=1))
    sy = np.sqrt((dy * dy).sum(axis=1))
    flat = (sx < 1e-12) | (sy < 1e-12)
    rho = (dx * dy).sum(axis=1) / np.where(flat, 1.0, sx * sy)
    out[window - 1 :] = np.where(flat, 0.0, np.clip(rho, -1.0, 1.0))
    return out


def gepu_lags(gepu, lags) -> dict[int, np.ndarray]:
    g = _series(gepu)
    lags = sorted(set(int(k) for k in lags))
    if lags and lags[-1] >= len(g):
        raise ValueError(f"lag {lags[-1]} exceeds series length {len(g)}")
    cols = {}
    for k in lags:
        col = np.full_like(g, np.nan)
        col[k:] = g[: len(g) - k]
        cols[k] = col
    return cols


def build_features(frame: TimeFrame, cfg: IndicatorConfig | None = None, routing: FeatureRouting | None = None) -> FeatureMatrix:
    """Concatenate scaled columns, target indicators, peer correlations and GEPU lags.

    One global trim of ``cfg.lookback()`` leading rows gives every column a
    shared date axis.
    """
    cfg = IndicatorConfig() if cfg is None else cfg
    routing = FeatureRouting() if routing is None else routing
    n = len(frame)
    p = frame.target
    peers = routing.peers(frame)
    gepu = routing.gepu_column if routing.gepu_column in frame.columns else None
    warmup = cfg.lookback(has_peers=bool(peers), has_gepu=gepu is not None)
    if warmup >= n:
        raise ValueError(f"indicator lookback {warmup} leaves no rows from {n}")

    cols: dict[str, np.ndarray] = {
        name: v for name, v in frame.columns.items() if name not in routing.hidden_columns
    }
    for k in cfg.momentum_lags:
        cols[f"mom_{k}"] = momentum(p, k)
    for w in cfg.sma_windows:
        cols[f"sma_{w}"] = sma(p, w)
    for w in cfg.ema_windows:
        cols[f"ema_{w}"] = ema(p, w)
    if cfg.vol_window is not None:
        cols[f"vol_{cfg.vol_window}"] = rolling_volatility(p, cfg.vol_window)
    if cfg.rsi_period is not None:
        cols[f"rsi_{cfg.rsi_period}"] = rsi(p, cfg.rsi_period) / 100.0
    if cfg.bollinger is not None:
        w, width = cfg.bollinger
        up, lo, bw = bollinger(p, w, width)
        cols[f"boll_upper_{w}"], cols[f"boll_lower_{w}"], cols[f"boll_bw_{w}"] = up, lo, bw
    if cfg.corr_window is not None:
        for other in peers:
            cols[f"corr_{other}"] = cross_correlation(p, frame.columns[other], cfg.corr_window)
    if gepu is not None:
        for k, col in gepu_lags(frame.columns[gepu], cfg.gepu_lags).items():
            cols[f"{gepu}_lag_{k}"] = col

    names = sorted(cols)
    values = np.column_stack([cols[c][warmup:] for c in names]) if names else np.empty((n - warmup, 0))
    if not np.all(np.isfinite(values)):
        bad = [c for c in names if not np.all(np.isfinite(cols[c][warmup:]))]
        raise ValueError(f"non-finite feature values after warmup in {bad}")
    return FeatureMatrix(frame.dates[warmup:], names, values, warmup)
