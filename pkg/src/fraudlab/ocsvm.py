"""nu-one-class SVM with an RBF kernel, trained by sequential minimal optimization.

Dual problem::

    min_a  1/2 sum_ij a_i a_j K(x_i, x_j)
    s.t.   sum_i a_i = 1,  0 <= a_i <= 1 / (nu * n)

Decision function ``f(x) = sum_i a_i K(x_i, x) - rho``; ``f(x) < 0`` is an outlier.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

PRUNE_BELOW = 1e-12


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (KKT residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class OcsvmConfig:
    nu: float = 0.01
    gamma: float = 0.1
    tol: float = 1e-3
    max_passes: int = 50
    subsample_cap: int | None = 10_000
    seed: int = 0
    cache_mb: float = 256.0

    def __post_init__(self):
        if not 0.0 < self.nu <= 1.0:
            raise ValueError(f"nu must lie in (0, 1], got {self.nu!r}")
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma!r}")
        if self.tol <= 0.0:
            raise ValueError(f"tol must be positive, got {self.tol!r}")


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    d = x - y
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(A, B, gamma: float) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


class SmoSolver:
    """Maximal-violating-pair SMO over the nu-OCSVM dual.

    Keeps ``grad = K @ alpha`` up to date and an LRU cache of kernel rows.
    Each :meth:`step` moves mass between one pair and preserves feasibility.
    """

    def __init__(self, X, nu: float, gamma: float, tol: float = 1e-3, cache_mb: float = 256.0):
        self.X = np.asarray(X, dtype=float)
        self.n = self.X.shape[0]
        self.gamma = gamma
        self.tol = tol
        self.C = 1.0 / (nu * self.n)
        # tol is read on the dual scaled to sum(alpha) = nu * n, where gradients are nu * n larger
        self.scale = nu * self.n
        self._sq = (self.X * self.X).sum(1)
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self._cache_rows = max(4, int(cache_mb * 2**20 / (8 * max(self.n, 1))))
        self.iterations = 0

        # fill the first floor(1/C) coordinates to the bound, remainder on the next one
        alpha = np.zeros(self.n)
        remaining = 1.0
        for i in range(self.n):
            a = min(self.C, remaining)
            alpha[i] = a
            remaining -= a
            if remaining <= 0.0:
                break
        self.alpha = alpha
        self.grad = np.zeros(self.n)
        for i in np.flatnonzero(alpha):
            self.grad += alpha[i] * self.kernel_row(i)

    def kernel_row(self, i: int) -> np.ndarray:
        row = self._cache.get(i)
        if row is not None:
            self._cache.move_to_end(i)
            return row
        sq = self._sq[i] + self._sq - 2.0 * (self.X @ self.X[i])
        np.maximum(sq, 0.0, out=sq)
        row = np.exp(-self.gamma * sq)
        self._cache[i] = row
        if len(self._cache) > self._cache_rows:
            self._cache.popitem(last=False)
        return row

    def select_pair(self):
        """(i, j, gap): raise alpha_i (smallest gradient), lower alpha_j (largest)."""
        g = self.grad
        up = self.alpha < self.C
        down = self.alpha > 0.0
        gi = np.where(up, g, np.inf)
        gj = np.where(down, g, -np.inf)
        i = int(np.argmin(gi))
        j = int(np.argmax(gj))
        return i, j, float(gj[j] - gi[i])

    def step(self) -> bool:
        """One pair update; False once the KKT gap is below tol."""
        i, j, gap = self.select_pair()
        if gap * self.scale < self.tol or i == j:
            return False
        Ki = self.kernel_row(i)
        Kj = self.kernel_row(j)
        eta = max(Ki[i] + Kj[j] - 2.0 * Ki[j], 1e-12)
        room_i = self.C - self.alpha[i]
        room_j = self.alpha[j]
        delta = min(gap / eta, room_i, room_j)
        # snap to the bound exactly when a box constraint becomes active
        self.alpha[i] = self.C if delta == room_i else self.alpha[i] + delta
        self.alpha[j] = 0.0 if delta == room_j else self.alpha[j] - delta
        self.grad += delta * (Ki - Kj)
        self.iterations += 1
        return True

    def objective(self) -> float:
        return 0.5 * float(self.alpha @ self.grad)

    def gap(self) -> float:
        """KKT residual on the nu * n scale that ``tol`` is compared against."""
        return self.select_pair()[2] * self.scale

    def rho(self) -> float:
        free = (self.alpha > 0.0) & (self.alpha < self.C)
        if free.any():
            return float(self.grad[free].mean())
        # no free vectors: any rho between the bound sets satisfies KKT
        at_upper = self.alpha >= self.C
        at_zero = self.alpha <= 0.0
        hi = self.grad[at_zero].min() if at_zero.any() else self.grad.max()
        lo = self.grad[at_upper].max() if at_upper.any() else self.grad.min()
        return float(0.5 * (hi + lo))

    def solve(self, max_iter: int):
        while self.step():
            if self.iterations >= max_iter:
                raise ConvergenceError(f"SMO did not converge in {max_iter} pair updates", self.gap())
        return self


@dataclass(frozen=True)
class OcsvmModel:
    support_vectors: np.ndarray
    alphas: np.ndarray
    rho: float
    gamma: float
    nu: float = 0.01
    n_train: int = 0

    def decision(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        out = np.empty(X.shape[0])
        step = 8192
        for s in range(0, X.shape[0], step):
            out[s:s + step] = rbf_matrix(X[s:s + step], self.support_vectors, self.gamma) @ self.alphas
        out -= self.rho
        return out[0] if single else out

    def flag(self, decisions) -> np.ndarray:
        return np.asarray(decisions, dtype=float) < 0.0

    def to_dict(self):
        return {
            "support_vectors": self.support_vectors.tolist(),
            "alphas": self.alphas.tolist(),
            "rho": self.rho,
            "gamma": self.gamma,
            "nu": self.nu,
            "n_train": self.n_train,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            support_vectors=np.asarray(d["support_vectors"], dtype=float).reshape(len(d["alphas"]), -1),
            alphas=np.asarray(d["alphas"], dtype=float),
            rho=float(d["rho"]),
            gamma=float(d["gamma"]),
            nu=float(d["nu"]),
            n_train=int(d["n_train"]),
        )


@dataclass(frozen=True)
class OcsvmFit:
    model: OcsvmModel
    train_rows: np.ndarray  # indices into the input matrix used for training
    iterations: int
    objective: float


def fit(X, config: OcsvmConfig = OcsvmConfig()) -> OcsvmFit:
    X = np.asarray(getattr(X, "values", X), dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("one-class SVM needs a non-empty 2-D matrix")
    n = X.shape[0]
    rows = np.arange(n)
    if config.subsample_cap is not None and n > config.subsample_cap:
        rng = np.random.default_rng(config.seed)
        rows = np.sort(rng.choice(n, size=config.subsample_cap, replace=False))
    Xt = X[rows]
    solver = SmoSolver(Xt, config.nu, config.gamma, config.tol, config.cache_mb)
    solver.solve(config.max_passes * Xt.shape[0])
    rho = solver.rho()
    alpha = np.where(solver.alpha < PRUNE_BELOW, 0.0, solver.alpha)
    sv = np.flatnonzero(alpha)
    model = OcsvmModel(Xt[sv].copy(), alpha[sv].copy(), rho, config.gamma, config.nu, Xt.shape[0])
    return OcsvmFit(model, rows, solver.iterations, solver.objective())
