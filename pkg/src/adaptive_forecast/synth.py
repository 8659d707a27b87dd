"""Regime-switching synthetic market frames for desk-scale validation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ingest import TimeFrame

SIGNAL_COLUMN = "semantic_signal"


@dataclass(frozen=True)
class Regime:
    duration: int
    drift: float = 0.0
    volatility: float = 0.01
    semantic_strength: float = 0.0  # 1: the signal column equals next-step return; 0: pure noise
    autocorrelation: float = 0.0  # AR(1) coefficient on returns; gives the temporal models something to learn


@dataclass(frozen=True)
class SynthSpec:
    """Target random walk per regime plus correlated peers, a GEPU level and a semantic side channel.

    ``mean_reversion`` pulls log price back toward its start each step, which
    keeps long runs inside the range a train-slice scaler has seen.
    ``signal_noise`` scales the noise in the semantic column relative to the
    regime volatility.
    """

    regimes: tuple[Regime, ...]
    n_assets: int = 2
    correlation: float = 0.6
    seed: int = 0
    start_price: float = 100.0
    start_date: str = "2020-01-01"
    mean_reversion: float = 0.0
    signal_noise: float = 3.0
    target: str = "target"
    include_gepu: bool = True
    length: int | None = field(default=None)

    def __post_init__(self) -> None:
        total = sum(r.duration for r in self.regimes)
        if not self.regimes or any(r.duration < 1 for r in self.regimes):
            raise ValueError("at least one regime with positive duration is required")
        if self.length is not None and self.length != total:
            raise ValueError(f"regime durations sum to {total}, not length {self.length}")
        if any(r.volatility < 0 for r in self.regimes):
            raise ValueError("volatility must be >= 0")
        if any(not -1.0 < r.autocorrelation < 1.0 for r in self.regimes):
            raise ValueError("autocorrelation must lie in (-1, 1)")
        if not -1.0 <= self.correlation <= 1.0:
            raise ValueError("correlation must lie in [-1, 1]")
        if self.start_price <= 0 or self.n_assets < 0:
            raise ValueError("start price must be > 0 and asset count >= 0")

    @property
    def total_length(self) -> int:
        return sum(r.duration for r in self.regimes)

    def regime_index(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.regimes)), [r.duration for r in self.regimes])


def generate(spec: SynthSpec) -> TimeFrame:
    rng = np.random.default_rng(spec.seed)
    n = spec.total_length
    reg = spec.regime_index()
    drift = np.array([spec.regimes[i].drift for i in reg])
    vol = np.array([spec.regimes[i].volatility for i in reg])
    strength = np.array([spec.regimes[i].semantic_strength for i in reg])
    phi = np.array([spec.regimes[i].autocorrelation for i in reg])

    # one extra step so the last row's signal can look ahead
    shocks = rng.standard_normal(n + 1)
    vol_ext = np.append(vol, vol[-1])
    drift_ext = np.append(drift, drift[-1])
    phi_ext = np.append(phi, phi[-1])
    price = np.empty(n + 1)
    returns = np.zeros(n + 1)
    price[0] = spec.start_price
    for t in range(1, n + 1):
        pull = -spec.mean_reversion * np.log(price[t - 1] / spec.start_price)
        r = drift_ext[t] + phi_ext[t] * returns[t - 1] + vol_ext[t] * shocks[t] + pull
        returns[t] = max(r, -0.9)
        price[t] = price[t - 1] * (1.0 + returns[t])

    cols: dict[str, np.ndarray] = {spec.target: price[:n]}
    rho = spec.correlation
    for k in range(spec.n_assets):
        own = rng.standard_normal(n)
        r_aux = rho * returns[:n] + np.sqrt(max(1.0 - rho * rho, 0.0)) * vol * own
        r_aux[0] = 0.0
        cols[f"asset_{k + 1}"] = (50.0 + 25.0 * k) * np.cumprod(1.0 + np.maximum(r_aux, -0.9))
    if spec.include_gepu:
        g = np.empty(n)
        g[0] = 100.0
        eps = rng.standard_normal(n)
        for t in range(1, n):
            g[t] = 100.0 + 0.95 * (g[t - 1] - 100.0) + 5.0 * eps[t]
        cols["gepu"] = np.maximum(g, 1.0)
    noise = rng.standard_normal(n)
    next_ret = returns[1:]
    cols[SIGNAL_COLUMN] = 100.0 * (strength * next_ret + (1.0 - strength) * spec.signal_noise * vol * noise)

    dates = np.datetime64(spec.start_date, "D") + np.arange(n)
    return TimeFrame(dates, cols, spec.target)


def regime_switch_spec(
    length: int = 1000,
    block: int = 100,
    volatility: float = 0.03,
    autocorrelation: float = 0.6,
    temporal_volatility: float | None = 0.01,
    seed: int = 0,
    **kwargs,
) -> SynthSpec:
    """Alternating semantic-favorable / temporal-favorable blocks covering ``length`` rows.

    Semantic blocks are a plain random walk with an exact side-channel signal;
    temporal blocks carry autocorrelated returns and a pure-noise signal, with
    their own volatility when ``temporal_volatility`` is given.
    """
    tvol = volatility if temporal_volatility is None else temporal_volatility
    regimes = []
    remaining, k = length, 0
    while remaining > 0:
        d = min(block, remaining)
        sem = k % 2 == 0
        regimes.append(Regime(d, 0.0, volatility, 1.0, 0.0) if sem else Regime(d, 0.0, tvol, 0.0, autocorrelation))
        remaining -= d
        k += 1
    kwargs.setdefault("mean_reversion", 0.05)
    return SynthSpec(tuple(regimes), seed=seed, **kwargs)
