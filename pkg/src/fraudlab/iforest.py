"""Isolation Forest: random axis-parallel partitioning, path-length anomaly scores."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .quantile import nearest_rank, top_fraction_mask

EULER_GAMMA = 0.5772156649


def average_path_length(n):
    """c(n) = 2 H(n-1) - 2 (n-1)/n with H(i) = ln(i) + Euler's constant; c(n) = 0 for n <= 1."""
    n = np.asarray(n, dtype=float)
    out = np.zeros_like(n)
    big = n > 1
    m = n[big]
    out[big] = 2.0 * (np.log(m - 1.0) + EULER_GAMMA) - 2.0 * (m - 1.0) / m
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class IsolationTree:
    """Flat arrays; ``feature[k] == -1`` marks a leaf."""

    feature: np.ndarray
    split: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature", "split", "left", "right", "size", "depth")}

    @classmethod
    def from_dict(cls, d):
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            split=np.asarray(d["split"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            size=np.asarray(d["size"], dtype=np.int64),
            depth=np.asarray(d["depth"], dtype=np.int64),
        )

    def path_lengths(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            active = f >= 0
            if not active.any():
                break
            a = rows[active]
            na = node[active]
            go_left = X[a, f[active]] < self.split[na]
            node[active] = np.where(go_left, self.left[na], self.right[na])
        return self.depth[node] + average_path_length(self.size[node])


def build_tree(X: np.ndarray, rng: np.random.Generator, max_depth: int) -> IsolationTree:
    feature, split, left, right, size, depth = [], [], [], [], [], []

    def new_node(d, n):
        for arr, v in ((feature, -1), (split, 0.0), (left, -1), (right, -1), (size, n), (depth, d)):
            arr.append(v)
        return len(feature) - 1

    root = new_node(0, X.shape[0])
    stack = [(root, np.arange(X.shape[0]))]
    while stack:
        k, idx = stack.pop()
        d = depth[k]
        if d >= max_depth or idx.size <= 1:
            continue
        sub = X[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        spread = np.flatnonzero(hi > lo)
        if spread.size == 0:
            continue
        q = int(spread[rng.integers(spread.size)])
        p = float(rng.uniform(lo[q], hi[q]))
        mask = sub[:, q] < p
        feature[k], split[k] = q, p
        li = new_node(d + 1, int(mask.sum()))
        ri = new_node(d + 1, int(idx.size - mask.sum()))
        left[k], right[k] = li, ri
        stack.append((ri, idx[~mask]))
        stack.append((li, idx[mask]))
    return IsolationTree(
        feature=np.asarray(feature, dtype=np.int64),
        split=np.asarray(split, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        size=np.asarray(size, dtype=np.int64),
        depth=np.asarray(depth, dtype=np.int64),
    )


@dataclass(frozen=True)
class IsolationForestModel:
    trees: tuple
    subsample: int
    contamination: float
    score_threshold: float
    seed: int

    @property
    def c_psi(self) -> float:
        return average_path_length(self.subsample)

    def expected_path_length(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if not np.all(np.isfinite(X)):
            raise ValueError("isolation forest input contains non-finite values")
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.path_lengths(X)
        return total / len(self.trees)

    def score(self, X) -> np.ndarray:
        """2 ** (-E[h(x)] / c(psi)); higher is more anomalous."""
        return np.power(2.0, -self.expected_path_length(X) / self.c_psi)

    def flag(self, scores) -> np.ndarray:
        return np.asarray(scores, dtype=float) > self.score_threshold

    def to_dict(self):
        return {
            "subsample": self.subsample,
            "contamination": self.contamination,
            "score_threshold": self.score_threshold,
            "seed": self.seed,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            trees=tuple(IsolationTree.from_dict(t) for t in d["trees"]),
            subsample=int(d["subsample"]),
            contamination=float(d["contamination"]),
            score_threshold=float(d["score_threshold"]),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class IsolationForestFit:
    model: IsolationForestModel
    train_scores: np.ndarray
    train_flags: np.ndarray


def fit(X, n_trees: int = 100, contamination: float = 0.01, subsample: int = 256, seed: int = 0) -> IsolationForestFit:
    """Grow ``n_trees`` isolation trees and set the contamination threshold.

    Each tree gets its own generator spawned from ``seed`` by tree index.
    Training flags mark exactly the top ``n - rank(1 - contamination)`` scores,
    ties going to the lower row index.
    """
    X = np.asarray(getattr(X, "values", X), dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("isolation forest needs a non-empty 2-D matrix")
    if X.shape[0] < 2:
        raise ValueError("isolation forest needs at least 2 rows")
    if not 0.0 < contamination < 0.5:
        raise ValueError(f"contamination must lie in (0, 0.5), got {contamination!r}")
    if not np.all(np.isfinite(X)):
        raise ValueError("isolation forest input contains non-finite values")

    n = X.shape[0]
    psi = min(subsample, n)
    max_depth = math.ceil(math.log2(psi)) if psi > 1 else 0
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        rows = rng.choice(n, size=psi, replace=False) if psi < n else rng.permutation(n)
        trees.append(build_tree(X[rows], rng, max_depth))

    model = IsolationForestModel(tuple(trees), psi, contamination, 0.0, seed)
    scores = model.score(X)
    threshold = nearest_rank(scores, 1.0 - contamination)
    model = IsolationForestModel(model.trees, psi, contamination, threshold, seed)
    return IsolationForestFit(model, scores, top_fraction_mask(scores, contamination))
