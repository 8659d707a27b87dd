"""CART trees and bagged forests, numpy only.

Regression trees split on squared-error reduction, classification trees on
entropy. Each fitted tree is stored as flat node arrays so prediction is a
vectorized descent and serialization is a plain dict of lists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, n_outputs): mean target or class probabilities

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=int)
        for node in range(len(self.feature)):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            n = node[idx]
            go_left = X[idx, self.feature[n]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            active[idx] = self.feature[node[idx]] >= 0
        return node

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(np.asarray(X, dtype=float))]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Tree:
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
        )


def _entropy(counts: np.ndarray, total: np.ndarray) -> np.ndarray:
    p = counts / np.maximum(total, 1)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log2(p), 0.0)
    return h.sum(axis=-1)


def _best_split(Xn: np.ndarray, Yn: np.ndarray, criterion: str, min_leaf: int):
    """Best (feature column, threshold, child impurity sum) over the columns of Xn."""
    n, f = Xn.shape
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    n_left = np.arange(1, n)[:, None]
    n_right = n - n_left
    if criterion == "mse":
        ys = Yn[:, 0][order]
        cs = np.cumsum(ys, axis=0)
        cs2 = np.cumsum(ys * ys, axis=0)
        s_l, s2_l = cs[:-1], cs2[:-1]
        s_r, s2_r = cs[-1] - s_l, cs2[-1] - s2_l
        score = (s2_l - s_l**2 / n_left) + (s2_r - s_r**2 / n_right)
    else:
        oh = Yn[order]  # (n, f, k) one-hot class indicators
        cl = np.cumsum(oh, axis=0)[:-1]
        cr = oh.sum(axis=0) - cl
        score = n_left * _entropy(cl, np.broadcast_to(n_left, (n - 1, f))) + n_right * _entropy(
            cr, np.broadcast_to(n_right, (n - 1, f))
        )
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    score = np.where(valid, score, np.inf)
    flat = int(np.argmin(score))  # row-major: ties resolve to the earliest position, then lowest column
    i, j = divmod(flat, f)
    threshold = 0.5 * (xs[i, j] + xs[i + 1, j])
    if not xs[i, j] <= threshold < xs[i + 1, j]:
        threshold = xs[i, j]
    return j, float(threshold), float(score[i, j])


def _impurity(Yn: np.ndarray, criterion: str) -> float:
    if criterion == "mse":
        y = Yn[:, 0]
        return float(((y - y.mean()) ** 2).sum())
    counts = Yn.sum(axis=0)
    return float(len(Yn) * _entropy(counts[None, :], np.array([len(Yn)]))[0])


def build_tree(
    X: np.ndarray,
    Y: np.ndarray,
    *,
    criterion: str,
    max_depth: int,
    min_samples_split: int,
    min_samples_leaf: int,
    max_features: int,
    rng: np.random.Generator,
) -> Tree:
    """Grow one tree depth-first. ``Y`` is (n, 1) targets or (n, k) one-hot labels."""
    n_features = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx: np.ndarray) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(Y[idx].mean(axis=0))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(X))), np.arange(len(X)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= max_depth or len(idx) < min_samples_split:
            continue
        Yn = Y[idx]
        parent = _impurity(Yn, criterion)
        if parent <= 1e-14:
            continue
        cols = np.sort(rng.choice(n_features, size=max_features, replace=False)) if max_features < n_features else np.arange(n_features)
        found = _best_split(X[np.ix_(idx, cols)], Yn, criterion, min_samples_leaf)
        if found is None or found[2] >= parent - 1e-14:
            continue
        j, thr, _ = found
        mask = X[idx, cols[j]] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = int(cols[j]), thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.vstack(value).astype(float),
    )


def _resolve_max_features(spec, n_features: int) -> int:
    if spec is None:
        return n_features
    if spec == "sqrt":
        return max(1, int(np.sqrt(n_features)))
    if isinstance(spec, float):
        return max(1, int(round(spec * n_features)))
    return max(1, min(int(spec), n_features))


@dataclass
class Forest:
    """Bootstrap-aggregated trees. ``classes`` is set for classification forests."""

    trees: list[Tree]
    n_features: int
    criterion: str
    max_depth: int
    min_samples_split: int
    min_samples_leaf: int
    seed: int
    classes: list | None = None

    @classmethod
    def fit(
        cls,
        X,
        y,
        *,
        n_estimators: int,
        max_depth: int,
        min_samples_split: int,
        min_samples_leaf: int,
        max_features=None,
        criterion: str = "mse",
        seed: int = 0,
        bootstrap: bool = True,
    ) -> Forest:
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        if X.ndim != 2 or len(X) == 0:
            raise ValueError("forest needs a non-empty 2-D feature matrix")
        if len(y) != len(X):
            raise ValueError(f"{len(X)} rows but {len(y)} targets")
        classes = None
        if criterion == "entropy":
            classes = sorted(np.unique(y).tolist())
            Y = (y[:, None] == np.asarray(classes)[None, :]).astype(float)
        else:
            Y = y.astype(float)[:, None]
        mf = _resolve_max_features(max_features, X.shape[1])
        trees = []
        for child in np.random.SeedSequence(seed).spawn(n_estimators):
            rng = np.random.default_rng(child)
            idx = rng.integers(0, len(X), len(X)) if bootstrap else np.arange(len(X))
            trees.append(
                build_tree(
                    X[idx],
                    Y[idx],
                    criterion=criterion,
                    max_depth=max_depth,
                    min_samples_split=min_samples_split,
                    min_samples_leaf=min_samples_leaf,
                    max_features=mf,
                    rng=rng,
                )
            )
        return cls(trees, X.shape[1], criterion, max_depth, min_samples_split, min_samples_leaf, seed, classes)

    def _check(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"row width {X.shape[1]} does not match training width {self.n_features}")
        return X

    def tree_outputs(self, X) -> np.ndarray:
        """(n_trees, n_rows) regression outputs."""
        X = self._check(X)
        return np.stack([t.predict_value(X)[:, 0] for t in self.trees])

    def predict(self, X) -> np.ndarray:
        return self.tree_outputs(X).mean(axis=0)

    def votes(self, X) -> np.ndarray:
        """(n_trees, n_rows) majority class of each tree's leaf; ties go to the lower class."""
        X = self._check(X)
        return np.stack([np.asarray(self.classes)[np.argmax(t.predict_value(X), axis=1)] for t in self.trees])

    def vote_fraction(self, X, cls) -> np.ndarray:
        return (self.votes(X) == cls).mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "criterion": self.criterion,
            "max_depth": self.max_depth,
            "min_samples_split": self.min_samples_split,
            "min_samples_leaf": self.min_samples_leaf,
            "seed": self.seed,
            "classes": self.classes,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Forest:
        return cls(
            [Tree.from_dict(t) for t in d["trees"]],
            d["n_features"],
            d["criterion"],
            d["max_depth"],
            d["min_samples_split"],
            d["min_samples_leaf"],
            d["seed"],
            d["classes"],
        )
