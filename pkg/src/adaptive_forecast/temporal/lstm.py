"""Stacked LSTM regressor with inter-layer batch normalization, trained by BPTT + Adam.

Gate layout inside the stacked weight matrix of each layer is (f, i, C, o);
every gate acts on the concatenation [h_{t-1}, x_t].
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

GATES = ("f", "i", "C", "o")
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainSpec:
    seq_len: int = 10
    learning_rate: float = 0.001
    batch_size: int = 32
    patience: int = 25
    max_epochs: int = 200
    dropout: float = 0.2
    hidden_sizes: tuple[int, ...] = (64, 32, 16)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.seq_len < 1:
            raise ValueError("sequence length must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be > 0")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("patience, batch size and max epochs must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainSpec:
        d = dict(d)
        if "hidden_sizes" in d:
            d["hidden_sizes"] = tuple(int(h) for h in d["hidden_sizes"])
        return cls(**d)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LstmNetwork:
    input_size: int
    hidden_sizes: tuple[int, ...] = (64, 32, 16)
    dropout: float = 0.2
    params: dict[str, np.ndarray] = field(default_factory=dict)
    running: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, input_size: int, hidden_sizes=(64, 32, 16), dropout: float = 0.2, seed: int = 0) -> LstmNetwork:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
        rng = np.random.default_rng(seed)
        params, running = {}, {}
        d_in = input_size
        for layer, h in enumerate(hidden_sizes):
            bound = 1.0 / np.sqrt(h + d_in)
            params[f"W{layer}"] = rng.uniform(-bound, bound, (4 * h, h + d_in))
            params[f"b{layer}"] = rng.uniform(-bound, bound, 4 * h)
            if layer < len(hidden_sizes) - 1:
                params[f"gamma{layer}"] = np.ones(h)
                params[f"beta{layer}"] = np.zeros(h)
                running[f"mean{layer}"] = np.zeros(h)
                running[f"var{layer}"] = np.ones(h)
            d_in = h
        bound = 1.0 / np.sqrt(d_in)
        params["W_out"] = rng.uniform(-bound, bound, (d_in, 1))
        params["b_out"] = rng.uniform(-bound, bound, 1)
        return cls(input_size, tuple(hidden_sizes), dropout, params, running)

    @property
    def n_layers(self) -> int:
        return len(self.hidden_sizes)

    def gate_weights(self, layer: int, gate: str) -> tuple[np.ndarray, np.ndarray]:
        """(W_gate, b_gate) views for one of f, i, C, o."""
        h = self.hidden_sizes[layer]
        k = GATES.index(gate)
        return self.params[f"W{layer}"][k * h : (k + 1) * h], self.params[f"b{layer}"][k * h : (k + 1) * h]

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    # forward / backward

    def forward(self, X: np.ndarray, train: bool = False, rng: np.random.Generator | None = None, update_stats: bool = True):
        """Return predictions (B,) and, in train mode, the cache for ``backward``."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            X = X[None]
        B, L, D = X.shape
        if D != self.input_size:
            raise ValueError(f"input width {D} does not match network input {self.input_size}")
        caches = []
        seq = X
        for layer, H in enumerate(self.hidden_sizes):
            W, b = self.params[f"W{layer}"], self.params[f"b{layer}"]
            h = np.zeros((B, H))
            c = np.zeros((B, H))
            hs = np.empty((B, L, H))
            steps = []
            for t in range(L):
                hx = np.concatenate([h, seq[:, t]], axis=1)
                z = hx @ W.T + b
                f = _sigmoid(z[:, :H])
                i = _sigmoid(z[:, H : 2 * H])
                g = np.tanh(z[:, 2 * H : 3 * H])
                o = _sigmoid(z[:, 3 * H :])
                c_prev = c
                c = f * c_prev + i * g
                tc = np.tanh(c)
                h = o * tc
                hs[:, t] = h
                if train:
                    steps.append((hx, f, i, g, o, c_prev, tc))
            cache = {"steps": steps}
            out = hs
            if layer < self.n_layers - 1:
                gamma, beta = self.params[f"gamma{layer}"], self.params[f"beta{layer}"]
                flat = out.reshape(B * L, H)
                if train:
                    mu = flat.mean(axis=0)
                    var = flat.var(axis=0)
                    if update_stats:
                        self.running[f"mean{layer}"] = (1 - BN_MOMENTUM) * self.running[f"mean{layer}"] + BN_MOMENTUM * mu
                        self.running[f"var{layer}"] = (1 - BN_MOMENTUM) * self.running[f"var{layer}"] + BN_MOMENTUM * var
                else:
                    mu, var = self.running[f"mean{layer}"], self.running[f"var{layer}"]
                inv_std = 1.0 / np.sqrt(var + BN_EPS)
                xhat = (flat - mu) * inv_std
                out = (gamma * xhat + beta).reshape(B, L, H)
                cache["bn"] = (xhat, inv_std)
            else:
                out = out[:, -1]
            if train and self.dropout > 0:
                mask = (rng.random(out.shape) >= self.dropout) / (1.0 - self.dropout)
                out = out * mask
                cache["mask"] = mask
            caches.append(cache)
            seq = out
        y = (seq @ self.params["W_out"] + self.params["b_out"])[:, 0]
        if train:
            return y, {"X": X, "layers": caches, "last": seq}
        return y

    def backward(self, cache: dict, dy: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of sum(dy * y) with respect to every parameter."""
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        last = cache["last"]
        grads["W_out"] = last.T @ dy[:, None]
        grads["b_out"] = np.array([dy.sum()])
        d_out = dy[:, None] @ self.params["W_out"].T  # (B, H_last)
        B, L, _ = cache["X"].shape
        for layer in reversed(range(self.n_layers)):
            lc = cache["layers"][layer]
            H = self.hidden_sizes[layer]
            if "mask" in lc:
                d_out = d_out * lc["mask"]
            if layer == self.n_layers - 1:
                dH = np.zeros((B, L, H))
                dH[:, -1] = d_out
            else:
                xhat, inv_std = lc["bn"]
                gamma = self.params[f"gamma{layer}"]
                dflat = d_out.reshape(B * L, H)
                grads[f"gamma{layer}"] = (dflat * xhat).sum(axis=0)
                grads[f"beta{layer}"] = dflat.sum(axis=0)
                dxhat = dflat * gamma
                n = B * L
                dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
                dH = dx.reshape(B, L, H)
            W = self.params[f"W{layer}"]
            dW = np.zeros_like(W)
            db = np.zeros(4 * H)
            d_in = W.shape[1] - H
            dX = np.empty((B, L, d_in))
            dh_next = np.zeros((B, H))
            dc_next = np.zeros((B, H))
            for t in reversed(range(L)):
                hx, f, i, g, o, c_prev, tc = lc["steps"][t]
                dh = dH[:, t] + dh_next
                do = dh * tc
                dc = dh * o * (1.0 - tc * tc) + dc_next
                dz = np.concatenate(
                    [
                        dc * c_prev * f * (1.0 - f),
                        dc * g * i * (1.0 - i),
                        dc * i * (1.0 - g * g),
                        do * o * (1.0 - o),
                    ],
                    axis=1,
                )
                dW += dz.T @ hx
                db += dz.sum(axis=0)
                dhx = dz @ W
                dh_next = dhx[:, :H]
                dX[:, t] = dhx[:, H:]
                dc_next = dc * f
            grads[f"W{layer}"] = dW
            grads[f"b{layer}"] = db
            d_out = dX
        return grads

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray, rng: np.random.Generator | None = None, update_stats: bool = True):
        """Mean squared error over the batch and its parameter gradients (train mode)."""
        pred, cache = self.forward(X, train=True, rng=rng, update_stats=update_stats)
        err = pred - y
        loss = float(np.mean(err * err))
        grads = self.backward(cache, 2.0 * err / len(y))
        return loss, grads

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X, train=False)

    # persistence

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "hidden_sizes": list(self.hidden_sizes),
            "dropout": self.dropout,
            "params": {k: v.tolist() for k, v in sorted(self.params.items())},
            "running": {k: v.tolist() for k, v in sorted(self.running.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> LstmNetwork:
        return cls(
            d["input_size"],
            tuple(d["hidden_sizes"]),
            d["dropout"],
            {k: np.asarray(v, dtype=float) for k, v in d["params"].items()},
            {k: np.asarray(v, dtype=float) for k, v in d["running"].items()},
        )


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainResult:
    network: LstmNetwork
    best_epoch: int
    best_val_loss: float
    history: list[tuple[float, float]]  # (train, validation) loss per epoch


def lstm_fit(
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_val: np.ndarray,
    y_val: np.ndarray,
    spec: TrainSpec,
) -> TrainResult:
    """Minimize MSE with Adam; keep the best-validation snapshot, stop after ``patience`` stale epochs."""
    if len(X_val) == 0:
        raise TrainingError("empty validation slice")
    if len(X_train) == 0:
        raise TrainingError("empty training set")
    net = LstmNetwork.init(X_train.shape[2], spec.hidden_sizes, spec.dropout, seed=spec.seed)
    rng = np.random.default_rng([spec.seed, 1])
    opt = Adam(net.params, lr=spec.learning_rate)
    best = (np.inf, 0, copy.deepcopy(net))
    history = []
    stale = 0
    n = len(X_train)
    for epoch in range(1, spec.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, spec.batch_size):
            idx = order[start : start + spec.batch_size]
            loss, grads = net.loss_and_grads(X_train[idx], y_train[idx], rng=rng)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}, batch starting {start}")
            opt.step(net.params, grads)
            total += loss * len(idx)
        val_loss = float(np.mean((net.predict(X_val) - y_val) ** 2))
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.append((total / n, val_loss))
        if val_loss < best[0]:
            best = (val_loss, epoch, copy.deepcopy(net))
            stale = 0
        else:
            stale += 1
            if stale >= spec.patience:
                break
    log.debug("lstm stopped after %d epochs, best epoch %d val %.3g", len(history), best[1], best[0])
    return TrainResult(best[2], best[1], best[0], history)


def lstm_train(X: np.ndarray, y: np.ndarray, spec: TrainSpec, val_fraction: float = 0.1) -> TrainResult:
    """Chronological split: the last ``val_fraction`` of samples drives early stopping."""
    if not 0 < val_fraction <= 0.5:
        raise ValueError("val_fraction must lie in (0, 0.5]")
    n_val = int(round(len(X) * val_fraction))
    if n_val < 1:
        raise TrainingError("empty validation slice")
    return lstm_fit(X[:-n_val], y[:-n_val], X[-n_val:], y[-n_val:], spec)
