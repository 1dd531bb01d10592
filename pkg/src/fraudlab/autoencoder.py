"""Dense autoencoder (4-8-4-8-4) trained with Adam on mean squared reconstruction error."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .quantile import nearest_rank


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    validation_fraction: float = 0.1
    patience: int = 10
    lr_patience: int = 5
    lr_factor: float = 0.5
    min_lr: float = 1e-5
    activation: str = "tanh"
    hidden: int = 8
    bottleneck: int = 4
    threshold_quantile: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 0.5:
            raise ValueError("validation_fraction must lie in (0, 0.5)")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class MlpParams:
    weights: list
    biases: list
    activation: str = "tanh"

    @property
    def dims(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)

    def arrays(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def to_dict(self):
        return {"weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases],
                "activation": self.activation}

    @classmethod
    def from_dict(cls, d):
        return cls([np.asarray(w, dtype=float) for w in d["weights"]],
                   [np.asarray(b, dtype=float) for b in d["biases"]], d["activation"])


def init_params(dims, seed: int, activation: str = "tanh") -> MlpParams:
    """Xavier-uniform weights, zero biases; one generator per layer index."""
    weights, biases = [], []
    for layer, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        rng = np.random.default_rng([seed, layer])
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, activation)


def _act(z, kind):
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _act_grad(a, z, kind):
    return 1.0 - a * a if kind == "tanh" else (z > 0.0).astype(float)


def forward(params: MlpParams, X):
    """Returns (output, cache); hidden layers use the configured activation, the output is linear."""
    a = X
    cache = [(None, X)]
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        a = z if k == last else _act(z, params.activation)
        cache.append((z, a))
    return a, cache


def mse_loss(params: MlpParams, X) -> float:
    out, _ = forward(params, X)
    return float(np.mean((out - X) ** 2))


def loss_and_grads(params: MlpParams, X):
    """Batch MSE (mean over rows and columns) and its gradient for every weight and bias."""
    out, cache = forward(params, X)
    diff = out - X
    with np.errstate(over="ignore"):  # an inf loss is reported by the caller
        loss = float(np.mean(diff * diff))
    delta = 2.0 * diff / diff.size
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for k in range(len(params.weights) - 1, -1, -1):
        a_prev = cache[k][1]
        gw[k] = a_prev.T @ delta
        gb[k] = delta.sum(axis=0)
        if k > 0:
            z_prev, a_prev_act = cache[k]
            delta = (delta @ params.weights[k].T) * _act_grad(a_prev_act, z_prev, params.activation)
    return loss, gw, gb


def reconstruction_errors(params: MlpParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if not np.all(np.isfinite(X)):
        raise ValueError("autoencoder input contains non-finite values")
    out, _ = forward(params, X)
    return np.mean((out - X) ** 2, axis=1)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,train_loss,val_loss,learning_rate\n")
            for e, (tl, vl, lr) in enumerate(zip(self.train_loss, self.val_loss, self.learning_rate), 1):
                fh.write(f"{e},{tl!r},{vl!r},{lr!r}\n")


@dataclass(frozen=True)
class AutoencoderModel:
    params: MlpParams
    threshold: float
    standardization_id: str = ""
    config: dict = field(default_factory=dict)

    def reconstruction_error(self, X) -> np.ndarray:
        return reconstruction_errors(self.params, X)

    def flag(self, errors) -> np.ndarray:
        return np.asarray(errors, dtype=float) > self.threshold

    def to_dict(self):
        return {"params": self.params.to_dict(), "threshold": self.threshold,
                "standardization_id": self.standardization_id, "config": self.config}

    @classmethod
    def from_dict(cls, d):
        return cls(MlpParams.from_dict(d["params"]), float(d["threshold"]),
                   d.get("standardization_id", ""), dict(d.get("config", {})))


def standardization_id(params) -> str:
    if params is None:
        return ""
    blob = json.dumps(params.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class _Adam:
    def __init__(self, params: MlpParams, cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params.arrays()]
        self.v = [np.zeros_like(p) for p in params.arrays()]
        self.t = 0

    def step(self, params: MlpParams, grads, lr):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(params.arrays(), grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.epsilon)


def train(matrix, config: TrainConfig = TrainConfig()):
    """Mini-batch Adam with plateau LR halving and early stopping on validation loss.

    The best-validation parameters are restored at the end; the flag threshold
    is the nearest-rank ``threshold_quantile`` of per-row errors over all rows.
    Returns ``(AutoencoderModel, TrainHistory)``.
    """
    X = np.asarray(getattr(matrix, "values", matrix), dtype=float)
    n = X.shape[0]
    if n < 10:
        raise ValueError(f"autoencoder needs at least 10 rows, got {n}")
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.validation_fraction * n)))
    train_idx, val_idx = perm[: n - n_val], perm[n - n_val:]
    Xtr, Xval = X[train_idx], X[val_idx]

    d = X.shape[1]
    params = init_params([d, cfg.hidden, cfg.bottleneck, cfg.hidden, d], cfg.seed, cfg.activation)
    opt = _Adam(params, cfg)
    lr = cfg.learning_rate
    hist = TrainHistory()
    best_val, best_params, best_epoch = np.inf, params.copy(), 0
    wait = plateau = 0

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(train_idx.size)
        for b, s in enumerate(range(0, order.size, cfg.batch_size)):
            loss, gw, gb = loss_and_grads(params, Xtr[order[s:s + cfg.batch_size]])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}, batch {b}")
            grads = [g for pair in zip(gw, gb) for g in pair]
            opt.step(params, grads, lr)
        tr = mse_loss(params, Xtr)
        va = mse_loss(params, Xval)
        if not (np.isfinite(tr) and np.isfinite(va)):
            raise FloatingPointError(f"non-finite loss at end of epoch {epoch}")
        hist.train_loss.append(tr)
        hist.val_loss.append(va)
        hist.learning_rate.append(lr)
        hist.stopped_epoch = epoch

        if va < best_val:
            best_val, best_params, best_epoch = va, params.copy(), epoch
            wait = plateau = 0
        else:
            wait += 1
            plateau += 1
            if plateau >= cfg.lr_patience and lr > cfg.min_lr:
                lr = max(lr * cfg.lr_factor, cfg.min_lr)
                plateau = 0
            if wait >= cfg.patience:
                break

    hist.best_epoch = best_epoch
    errors = reconstruction_errors(best_params, X)
    threshold = nearest_rank(errors, cfg.threshold_quantile)
    std_id = standardization_id(getattr(matrix, "params", None))
    model = AutoencoderModel(best_params, threshold, std_id, asdict(cfg))
    return model, hist
