from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_forecast.features import (
    FeatureRouting,
    IndicatorConfig,
    bollinger,
    build_features,
    cross_correlation,
    ema,
    gepu_lags,
    momentum,
    rolling_volatility,
    rsi,
    sma,
)
from adaptive_forecast.synth import generate, regime_switch_spec

from conftest import make_frame

prices = st.lists(st.floats(0.01, 1.0, allow_nan=False), min_size=25, max_size=60)


def test_momentum_examples():
    np.testing.assert_array_equal(momentum([0.3] * 5, 2)[2:], 0)
    assert momentum([0.5, 0.6], 1)[1] == pytest.approx(0.2)
    assert momentum([0.4, 0.2], 1)[1] == pytest.approx(-0.5)
    assert np.isnan(momentum([0.4, 0.2], 1)[0])


def test_sma_ema_examples():
    np.testing.assert_allclose(sma([0.7] * 6, 3)[2:], 0.7)
    np.testing.assert_allclose(ema([0.7] * 6, 3), 0.7)
    np.testing.assert_allclose(sma([1, 2, 3, 4], 2)[1:], [1.5, 2.5, 3.5])
    assert ema([0, 1], 2)[1] == pytest.approx(2 / 3)


def test_window_errors():
    with pytest.raises(ValueError):
        sma([1, 2], 3)
    with pytest.raises(ValueError):
        momentum([1, 2], 2)


def test_volatility_examples():
    np.testing.assert_array_equal(rolling_volatility([0.5] * 8, 3)[3:], 0)
    assert rolling_volatility([1.0, 1.1, 0.99], 2)[2] == pytest.approx(np.std([0.1, -0.1], ddof=1))
    geometric = 0.1 * 1.05 ** np.arange(10)
    np.testing.assert_allclose(rolling_volatility(geometric, 4)[4:], 0, atol=1e-12)


def test_rsi_examples():
    assert rsi(np.linspace(0.1, 0.9, 20), 14)[-1] == 100
    assert rsi(np.linspace(0.9, 0.1, 20), 14)[-1] == 0
    balanced = [0.5, 0.6, 0.5, 0.6, 0.5]  # gains 0.2, losses 0.2
    assert rsi(balanced, 4)[4] == pytest.approx(50)
    assert rsi([0.5] * 6, 3)[5] == 50


def test_bollinger_examples():
    up, lo, bw = bollinger([0.3] * 5, 3)
    np.testing.assert_allclose(up[2:], 0.3)
    np.testing.assert_allclose(lo[2:], 0.3)
    np.testing.assert_allclose(bw[2:], 0)
    up, lo, _ = bollinger([0.4, 0.6], 2, 2.0)
    assert up[1] == pytest.approx(0.5 + 2 * np.std([0.4, 0.6], ddof=1))
    assert up[1] == pytest.approx(0.7828, abs=1e-4)


def test_correlation_examples():
    x = np.array([0.1, 0.4, 0.2, 0.8, 0.5, 0.9])
    np.testing.assert_allclose(cross_correlation(x, x, 3)[2:], 1)
    np.testing.assert_allclose(cross_correlation(x, -x, 3)[2:], -1)
    assert cross_correlation([1, 2, 3], [1, 3, 2], 3)[2] == pytest.approx(0.5)
    assert cross_correlation([1, 1, 1], [1, 3, 2], 3)[2] == 0


def test_gepu_lag_examples():
    g = np.arange(10.0)
    cols = gepu_lags(g, {0, 1, 3, 7})
    assert sorted(cols) == [0, 1, 3, 7]
    np.testing.assert_array_equal(cols[0], g)
    np.testing.assert_array_equal(gepu_lags([5.0, 6, 7], [1])[1][1:], [5, 6])
    assert max(int(np.isnan(c).sum()) for c in cols.values()) == 7


def test_build_momentum_only_two_columns():
    fr = make_frame(np.linspace(0.2, 0.8, 40), peer=np.linspace(0.9, 0.1, 40) ** 2)
    cfg = replace(IndicatorConfig.empty(), momentum_lags=(1,), corr_window=30)
    fm = build_features(fr, cfg)
    assert fm.names == ["corr_peer", "mom_1", "peer", "target"]
    assert fm.warmup == 30


def test_build_empty_config_is_identity():
    fr = make_frame([0.1, 0.2, 0.3], other=[0.5, 0.4, 0.3])
    fm = build_features(fr, IndicatorConfig.empty())
    assert fm.warmup == 0
    np.testing.assert_array_equal(fm.column("target"), fr.target)
    np.testing.assert_array_equal(fm.column("other"), fr.columns["other"])


def test_build_default_warmup_and_hidden_column():
    fr = generate(regime_switch_spec(100, block=50, seed=0))
    from adaptive_forecast.ingest import fit_scaler, transform

    fm = build_features(transform(fr, fit_scaler(fr)))
    assert fm.warmup == 30
    assert len(fm.dates) == 70
    assert "semantic_signal" not in fm.names
    assert "gepu_lag_7" in fm.names and "rsi_14" in fm.names
    assert fm.column("rsi_14").max() <= 1.0
    # GEPU is never treated as a tradable peer
    assert "corr_gepu" not in fm.names


def test_build_routing_sentiment_not_peer():
    fr = make_frame(np.linspace(0.2, 0.8, 40), mood=np.linspace(0.9, 0.1, 40))
    fm = build_features(fr, replace(IndicatorConfig.empty(), corr_window=5), FeatureRouting(sentiment_columns=("mood",)))
    assert fm.names == ["mood", "target"]


def test_build_rejects_short_frame():
    with pytest.raises(ValueError, match="lookback"):
        build_features(make_frame(np.linspace(0.1, 0.9, 20)))


def test_indicator_config_roundtrip():
    cfg = IndicatorConfig(momentum_lags=(1, 4), bollinger=None)
    assert IndicatorConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        IndicatorConfig.from_dict({"bogus": 1})


@settings(max_examples=50, deadline=None)
@given(prices)
def test_indicator_ranges(p):
    r = rsi(p, 14)
    assert np.all((r[14:] >= 0) & (r[14:] <= 100))
    up, lo, bw = bollinger(p, 20)
    assert np.all(up[19:] >= lo[19:] - 1e-12)
    assert np.all(bw[19:] >= -1e-12)
    c = cross_correlation(p, np.sqrt(p), 10)
    assert np.all(np.abs(c[9:]) <= 1)
    s = sma(p, 5)[4:]
    assert np.all(s <= max(p) + 1e-12) and np.all(s >= min(p) - 1e-12)


@settings(max_examples=30, deadline=None)
@given(prices, st.integers(0, 24))
def test_indicators_are_causal(p, cut):
    """Values at row t never depend on rows after t."""
    p = np.asarray(p)
    q = p.copy()
    q[cut + 1 :] = q[cut + 1 :][::-1]
    for f in (lambda s: sma(s, 5), lambda s: ema(s, 5), lambda s: rsi(s, 14), lambda s: rolling_volatility(s, 5)):
        np.testing.assert_array_equal(f(p)[: cut + 1], f(q)[: cut + 1])
