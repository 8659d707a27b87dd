import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptive_forecast.temporal import (
    TemporalModel,
    combine_ml,
    forest_fit,
    forest_predict,
    make_sequences,
)
from adaptive_forecast.temporal.lstm import LstmNetwork, TrainingError, TrainSpec, lstm_fit, lstm_train
from adaptive_forecast.temporal.trees import Forest, Tree

from conftest import gradient_check


def test_make_sequences_counts():
    f = np.arange(11 * 2, dtype=float).reshape(11, 2)
    X, y = make_sequences(f, np.arange(11.0), 10)
    assert X.shape == (1, 10, 2)
    f = np.arange(15 * 2, dtype=float).reshape(15, 2)
    X, y = make_sequences(f, np.arange(15.0), 10)
    assert X.shape == (5, 10, 2)
    np.testing.assert_array_equal(y, np.arange(10, 15))
    np.testing.assert_array_equal(X[0], f[:10])


def test_make_sequences_locality():
    f = np.random.default_rng(0).normal(size=(15, 3))
    X1, _ = make_sequences(f, np.zeros(15), 10)
    g = f.copy()
    g[12] += 1
    X2, _ = make_sequences(g, np.zeros(15), 10)
    changed = [k for k in range(len(X1)) if not np.array_equal(X1[k], X2[k])]
    assert changed == [k for k in range(5) if k <= 12 < k + 10]


def test_zero_weights_output_is_head_bias():
    net = LstmNetwork.init(3, (4, 3), dropout=0.0, seed=1)
    for k in net.params:
        if not k.startswith("gamma"):
            net.params[k][...] = 0.0
    net.params["b_out"][...] = 0.37
    out = net.predict(np.random.default_rng(0).normal(size=(2, 5, 3)))
    np.testing.assert_allclose(out, 0.37)


def _oracle_forward(net, seq):
    """Step-by-step gate evaluation written from the cell equations."""
    sig = lambda z: 1 / (1 + np.exp(-z))
    x = seq
    for layer, H in enumerate(net.hidden_sizes):
        Wf, bf = net.gate_weights(layer, "f")
        Wi, bi = net.gate_weights(layer, "i")
        Wc, bc = net.gate_weights(layer, "C")
        Wo, bo = net.gate_weights(layer, "o")
        h, c = np.zeros(H), np.zeros(H)
        hs = []
        for xt in x:
            v = np.concatenate([h, xt])
            f_t = sig(Wf @ v + bf)
            i_t = sig(Wi @ v + bi)
            c_tilde = np.tanh(Wc @ v + bc)
            c = f_t * c + i_t * c_tilde
            o_t = sig(Wo @ v + bo)
            h = o_t * np.tanh(c)
            hs.append(h)
        hs = np.array(hs)
        if layer < net.n_layers - 1:
            mu, var = net.running[f"mean{layer}"], net.running[f"var{layer}"]
            hs = net.params[f"gamma{layer}"] * (hs - mu) / np.sqrt(var + 1e-5) + net.params[f"beta{layer}"]
        x = hs
    return float(x[-1] @ net.params["W_out"][:, 0] + net.params["b_out"][0])


def test_forward_matches_oracle():
    net = LstmNetwork.init(2, (2, 2, 2), dropout=0.2, seed=42)
    net.running["mean0"] = np.array([0.1, -0.2])
    net.running["var0"] = np.array([0.5, 2.0])
    seq = np.random.default_rng(42).normal(size=(6, 2))
    assert net.predict(seq[None])[0] == pytest.approx(_oracle_forward(net, seq), abs=1e-12)
    np.testing.assert_array_equal(net.predict(np.stack([seq, seq])), net.predict(np.stack([seq, seq])))


def test_gradient_check_tiny_net():
    net = LstmNetwork.init(2, (2, 2, 2), dropout=0.0, seed=7)
    rng = np.random.default_rng(7)
    assert gradient_check(net, rng.normal(size=(5, 4, 2)), rng.uniform(size=5)) < 1e-4


def test_init_bounds():
    net = LstmNetwork.init(5, (6, 3), seed=0)
    assert np.abs(net.params["W0"]).max() <= 1 / np.sqrt(6 + 5)
    assert np.abs(net.params["W1"]).max() <= 1 / np.sqrt(3 + 6)
    assert net.params["W0"].shape == (24, 11)


def test_constant_target_learned():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(200, 5, 3))
    y = np.full(200, 0.42)
    spec = TrainSpec(seq_len=5, learning_rate=0.01, max_epochs=60, patience=10, hidden_sizes=(8, 4), dropout=0.0)
    res = lstm_train(X, y, spec)
    pred = res.network.predict(rng.uniform(size=(20, 5, 3)))
    assert np.max(np.abs(pred - 0.42)) < 0.02


def test_training_deterministic_and_early_stopping():
    rng = np.random.default_rng(1)
    X = rng.uniform(size=(80, 4, 2))
    y = X[:, -1, 0]
    spec = TrainSpec(seq_len=4, max_epochs=15, patience=3, hidden_sizes=(6, 3), seed=5)
    a = lstm_train(X, y, spec)
    b = lstm_train(X, y, spec)
    assert a.history == b.history
    assert a.best_val_loss == min(v for _, v in a.history)
    assert len(a.history) <= spec.max_epochs


def test_training_errors():
    spec = TrainSpec(max_epochs=1)
    with pytest.raises(TrainingError):
        lstm_fit(np.zeros((3, 2, 1)), np.zeros(3), np.zeros((0, 2, 1)), np.zeros(0), spec)
    with pytest.raises(TrainingError, match="non-finite"):
        lstm_fit(np.full((4, 2, 1), np.nan), np.zeros(4), np.zeros((2, 2, 1)), np.zeros(2), spec)
    with pytest.raises(ValueError):
        TrainSpec(dropout=1.0)


def test_network_serialization_roundtrip():
    net = LstmNetwork.init(3, (4, 2), seed=3)
    back = LstmNetwork.from_dict(json.loads(json.dumps(net.to_dict())))
    X = np.random.default_rng(0).normal(size=(3, 5, 3))
    np.testing.assert_array_equal(net.predict(X), back.predict(X))


def test_forest_constant_target():
    X = np.random.default_rng(0).uniform(size=(50, 3))
    f = forest_fit(X, np.full(50, 0.3), n_estimators=10)
    np.testing.assert_allclose(f.predict(X), 0.3)


def test_forest_identity_function():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(200, 1))
    f = forest_fit(x, x[:, 0], seed=1, n_estimators=30)
    test = np.linspace(0.05, 0.95, 50)[:, None]
    assert np.mean(np.abs(f.predict(test) - test[:, 0])) < 0.05


def test_forest_step_function():
    rng = np.random.default_rng(2)
    x = rng.uniform(size=(300, 1))
    y = (x[:, 0] > 0.5).astype(float)
    f = forest_fit(x, y, seed=0, n_estimators=30)
    test = np.concatenate([np.linspace(0, 0.45, 40), np.linspace(0.55, 1, 40)])[:, None]
    acc = np.mean((f.predict(test) > 0.5) == (test[:, 0] > 0.5))
    assert acc > 0.95


def test_forest_predict_mean_of_trees():
    leaf = lambda v: Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([[v]]))
    one = Forest([leaf(0.2)], 1, "mse", 1, 2, 1, 0)
    assert forest_predict(one, [0.5]) == pytest.approx(0.2)
    two = Forest([leaf(0.2), leaf(0.4)], 1, "mse", 1, 2, 1, 0)
    assert forest_predict(two, [0.5]) == pytest.approx(0.3)


def test_forest_deterministic_and_roundtrip():
    rng = np.random.default_rng(4)
    X, y = rng.uniform(size=(60, 4)), rng.uniform(size=60)
    a = forest_fit(X, y, seed=9, n_estimators=5)
    b = forest_fit(X, y, seed=9, n_estimators=5)
    np.testing.assert_array_equal(a.predict(X), b.predict(X))
    back = Forest.from_dict(json.loads(json.dumps(a.to_dict())))
    np.testing.assert_array_equal(a.predict(X), back.predict(X))


def test_forest_min_leaf_and_depth():
    rng = np.random.default_rng(5)
    X, y = rng.uniform(size=(120, 3)), rng.uniform(size=120)
    f = Forest.fit(X, y, n_estimators=3, max_depth=4, min_samples_split=5, min_samples_leaf=2, seed=0, bootstrap=False)
    for t in f.trees:
        assert t.depth <= 4
        counts = np.bincount(t.apply(X), minlength=len(t.feature))
        leaves = np.flatnonzero(t.feature < 0)
        assert counts[leaves].min() >= 2


def test_combine_ml_examples():
    p = combine_ml(0.5, 0.5)
    assert (p.y_hat, p.uncertainty, p.confidence) == (0.5, 0.0, 1.0)
    p = combine_ml(0.6, 0.3, 0.7)
    assert p.y_hat == pytest.approx(0.51)
    assert p.uncertainty == pytest.approx(0.5)
    assert p.confidence == pytest.approx(0.5)
    with pytest.raises(ValueError):
        combine_ml(0.5, 0.5, 1.0)
    assert combine_ml(0.5, 0.0, 0.7).uncertainty <= 1.0
    assert combine_ml(0.0, 0.0).uncertainty == 1.0
    assert combine_ml(0.4, 0.2, 0.0, allow_boundary=True).y_hat == pytest.approx(0.2)


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.5, 1.5), st.floats(-0.5, 1.5), st.floats(0.01, 0.99))
def test_combine_ml_properties(a, b, alpha):
    p, q = combine_ml(a, b, alpha), combine_ml(b, a, alpha)
    assert p.uncertainty == q.uncertainty
    assert 0 <= p.uncertainty <= 1 and p.confidence == pytest.approx(1 - p.uncertainty)
    lo, hi = sorted((p.parts["lstm"], p.parts["rf"]))
    assert lo - 1e-12 <= p.y_hat <= hi + 1e-12


def test_temporal_model_roundtrip_and_origin_rows():
    rng = np.random.default_rng(0)
    feats = rng.uniform(size=(40, 3))
    net = LstmNetwork.init(3, (4, 2), seed=0)
    forest = forest_fit(feats, feats[:, 0], n_estimators=3)
    model = TemporalModel(net, forest, 5, ["a", "b", "c"], 0.7, TrainSpec(seq_len=5))
    la, rf = model.member_predictions(feats, [10])
    assert la[0] == pytest.approx(net.predict(feats[6:11][None])[0])
    assert rf[0] == pytest.approx(forest.predict(feats[10:11])[0])
    with pytest.raises(ValueError):
        model.member_predictions(feats, [3])
    back = TemporalModel.from_dict(json.loads(json.dumps(model.to_dict({"x": [0, 1]}))))
    assert back.predict(feats, [20])[0] == model.predict(feats, [20])[0]
