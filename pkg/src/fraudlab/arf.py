"""Adaptive risk scoring: context-initialized weights refined online by mini-batch gradient steps.

Risk of a transaction::

    R = w1*f_IF + w2*f_OCSVM + w3*f_AE + w4*spend_delta + w5*time_delta

With ground-truth labels y in {0, 1} the loss is cross-entropy of logistic(R);
with pseudo-labels y in {-1, +1} it is the hinge max(0, m - y*(R - tau)).
"""

from __future__ import annotations

import bisect
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .quantile import nearest_rank_index

log = logging.getLogger(__name__)

N_WEIGHTS = 5
WEIGHT_NAMES = ("w_if", "w_ocsvm", "w_ae", "w_spend", "w_time")
BASE_WEIGHT = 0.2
PRIOR_REFERENCE = 0.005
ABSTAIN = 0


@dataclass(frozen=True)
class ArfContext:
    region_group: str = "global"
    prior: float = 0.005
    volatility: float = 0.0
    legal_weight: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.prior < 1.0:
            raise ValueError(f"prior must lie in (0, 1), got {self.prior!r}")
        if not 0.0 <= self.volatility <= 1.0:
            raise ValueError(f"volatility must lie in [0, 1], got {self.volatility!r}")
        if self.legal_weight < 0.0:
            raise ValueError(f"legal weight must be non-negative, got {self.legal_weight!r}")


@dataclass(frozen=True)
class ArfConfig:
    learning_rate: float = 0.01
    margin: float = 1.0
    tau_quantile: float = 0.95
    tau_window: int = 10_000
    warmup: int = 100
    batch_size: int = 32
    w_max: float = 5.0
    spend_cap: float = 10.0
    time_horizon: float = 3600.0

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError("learning rate must be positive")
        if self.margin <= 0.0:
            raise ValueError("hinge margin must be positive")


@dataclass(frozen=True)
class ArfFeatures:
    f_if: float = 0.0
    f_ocsvm: float = 0.0
    f_ae: float = 0.0
    spend_delta: float = 0.0
    time_delta: float = 0.0

    def vector(self) -> np.ndarray:
        return np.array([self.f_if, self.f_ocsvm, self.f_ae, self.spend_delta, self.time_delta], dtype=float)

    @property
    def detector_votes(self) -> int:
        return int(self.f_if > 0) + int(self.f_ocsvm > 0) + int(self.f_ae > 0)


@dataclass(frozen=True)
class ArfWeights:
    w: tuple
    update_count: int = 0
    context_group: str = "global"

    def vector(self) -> np.ndarray:
        return np.asarray(self.w, dtype=float)


def spend_delta(amount, mean, std, cap: float = 10.0):
    """|amount - mean| / std capped at ``cap``; 0 for a zero-variance card."""
    amount, mean, std = (np.asarray(v, dtype=float) for v in (amount, mean, std))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(std > 0, np.abs(amount - mean) / np.where(std > 0, std, 1.0), 0.0)
    z = np.minimum(z, cap)
    return float(z) if z.ndim == 0 else z


def time_delta(seconds_since_last, horizon: float = 3600.0):
    """Linear recency ramp: 1 at zero seconds, 0 at ``horizon`` seconds or more."""
    r = np.clip(1.0 - np.asarray(seconds_since_last, dtype=float) / horizon, 0.0, 1.0)
    return float(r) if r.ndim == 0 else r


def init_weights(ctx: ArfContext, w_max: float = 5.0) -> ArfWeights:
    """Detector weights start neutral at 0.2; the two behavioral weights scale with
    fraud prior, category volatility and regulatory intensity."""
    behavioral = (BASE_WEIGHT * (1.0 + ctx.prior / PRIOR_REFERENCE)
                  * (1.0 + 0.5 * ctx.volatility) * (1.0 + 0.25 * ctx.legal_weight))
    w = np.clip([BASE_WEIGHT, BASE_WEIGHT, BASE_WEIGHT, behavioral, behavioral], 0.0, w_max)
    return ArfWeights(tuple(float(x) for x in w), 0, ctx.region_group)


def score(weights, feats) -> float:
    w = weights.vector() if isinstance(weights, ArfWeights) else np.asarray(weights, dtype=float)
    f = feats.vector() if isinstance(feats, ArfFeatures) else np.asarray(feats, dtype=float)
    return float(w @ f)


def pseudo_label(feats: ArfFeatures) -> int:
    """+1 beyond 3 sigma, -1 for quiet rows with no detector vote, else abstain (0)."""
    if feats.spend_delta > 3.0:
        return 1
    if feats.spend_delta < 0.5 and feats.detector_votes == 0:
        return -1
    return ABSTAIN


def _sigmoid(x):
    return 0.5 * (1.0 + math.tanh(0.5 * x))


def example_loss(w, f, y, kind, tau, margin) -> float:
    r = float(np.dot(w, f))
    if kind == "true":
        p = min(max(_sigmoid(r), 1e-15), 1.0 - 1e-15)
        return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))
    return max(0.0, margin - y * (r - tau))


def example_grad(w, f, y, kind, tau, margin) -> np.ndarray:
    r = float(np.dot(w, f))
    if kind == "true":
        return (_sigmoid(r) - y) * f
    if margin - y * (r - tau) > 0.0:
        return -y * f
    return np.zeros_like(f)


def batch_loss(w, batch, tau: float, margin: float) -> float:
    """Mean loss over (features, label, kind) triples; kind is "true" or "pseudo"."""
    w = np.asarray(w, dtype=float)
    return float(np.mean([example_loss(w, np.asarray(f, float), y, k, tau, margin) for f, y, k in batch]))


def batch_grad(w, batch, tau: float, margin: float) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    g = np.zeros(N_WEIGHTS)
    for f, y, k in batch:
        g += example_grad(w, np.asarray(f, float), y, k, tau, margin)
    return g / len(batch)


def update(weights: ArfWeights, batch, config: ArfConfig = ArfConfig(), tau: float = 0.0) -> ArfWeights:
    """One projected gradient step on the mean batch loss.

    ``batch`` holds (ArfFeatures or vector, label, kind) with kind "true"
    (label 0/1) or "pseudo" (label -1/+1, abstentions dropped). An empty
    effective batch leaves the weights untouched.
    """
    items = []
    for f, y, kind in batch:
        if kind == "pseudo" and y == ABSTAIN:
            continue
        vec = f.vector() if isinstance(f, ArfFeatures) else np.asarray(f, dtype=float)
        items.append((vec, y, kind))
    if not items:
        log.warning("empty effective batch (all abstentions); weights unchanged")
        return weights
    w = weights.vector() - config.learning_rate * batch_grad(weights.vector(), items, tau, config.margin)
    w = np.clip(w, 0.0, config.w_max)
    return ArfWeights(tuple(float(x) for x in w), weights.update_count + 1, weights.context_group)


class PercentileTracker:
    """Nearest-rank quantile over a sliding window of recent scores."""

    def __init__(self, quantile: float = 0.95, window: int = 10_000, warmup: int = 100):
        self.quantile = quantile
        self.window = window
        self.warmup = warmup
        self._fifo: deque = deque()
        self._sorted: list = []

    def __len__(self):
        return len(self._fifo)

    @property
    def warm(self) -> bool:
        return len(self._fifo) >= self.warmup

    def add(self, value: float) -> None:
        self._fifo.append(value)
        bisect.insort(self._sorted, value)
        if len(self._fifo) > self.window:
            old = self._fifo.popleft()
            del self._sorted[bisect.bisect_left(self._sorted, old)]

    def value(self) -> float:
        if not self._sorted:
            return 0.0
        return self._sorted[nearest_rank_index(self.quantile, len(self._sorted))]


def high_risk_rule(r: float, feats: ArfFeatures, seconds_since_last: float,
                   tracker: PercentileTracker | None = None) -> bool:
    """Above the running 95th percentile (once warm), two or more detector votes,
    or a > 3 sigma amount together with rapid reuse (< 60 s)."""
    if tracker is not None and tracker.warm and r > tracker.value():
        return True
    if feats.detector_votes >= 2:
        return True
    return feats.spend_delta > 3.0 and seconds_since_last < 60.0


class WelfordStats:
    """Streaming per-card mean / population std."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    @classmethod
    def from_batch(cls, mean, std, count):
        s = cls()
        s.count, s.mean, s.m2 = int(count), float(mean), float(std) ** 2 * int(count)
        return s

    def add(self, x: float) -> None:
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.m2 += d * (x - self.mean)

    @property
    def std(self) -> float:
        return math.sqrt(max(self.m2, 0.0) / self.count) if self.count else 0.0


@dataclass
class StreamResult:
    txn_id: str
    risk: float
    high_risk: bool
    contributions: dict
    group: str


@dataclass
class ArfEngine:
    """Sequential single-writer scorer/updater with one weight vector per context group."""

    contexts: dict = field(default_factory=dict)
    config: ArfConfig = field(default_factory=ArfConfig)
    audit: object = None  # file-like; receives one JSON line per weight update
    weights: dict = field(default_factory=dict)
    tracker: PercentileTracker = None
    _pending: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tracker is None:
            self.tracker = PercentileTracker(self.config.tau_quantile, self.config.tau_window, self.config.warmup)
        for group, ctx in self.contexts.items():
            self.weights.setdefault(group, init_weights(ctx, self.config.w_max))

    def weights_for(self, group: str) -> ArfWeights:
        if group not in self.weights:
            ctx = self.contexts.get(group) or ArfContext(region_group=group)
            self.weights[group] = init_weights(ctx, self.config.w_max)
        return self.weights[group]

    def process(self, txn_id: str, feats: ArfFeatures, seconds_since_last: float,
                group: str = "global", label: int | None = None, stamp=None) -> StreamResult:
        w = self.weights_for(group)
        r = score(w, feats)
        high = high_risk_rule(r, feats, seconds_since_last, self.tracker)
        contrib = dict(zip(WEIGHT_NAMES, (w.vector() * feats.vector()).tolist()))
        self.tracker.add(r)

        if label is not None:
            item = (feats.vector(), int(label), "true")
        else:
            y = pseudo_label(feats)
            item = None if y == ABSTAIN else (feats.vector(), y, "pseudo")
        if item is not None:
            buf = self._pending.setdefault(group, [])
            buf.append(item)
            if len(buf) >= self.config.batch_size:
                self._flush(group, stamp)
        return StreamResult(txn_id, r, high, contrib, group)

    def _flush(self, group, stamp=None):
        buf = self._pending.pop(group, [])
        if not buf:
            return
        new = update(self.weights_for(group), buf, self.config, self.tracker.value())
        self.weights[group] = new
        if self.audit is not None:
            rec = {"stamp": stamp, "context_group": group, "update_count": new.update_count,
                   **dict(zip(WEIGHT_NAMES, new.w))}
            self.audit.write(json.dumps(rec, sort_keys=True) + "\n")

    def flush(self, stamp=None):
        for group in sorted(self._pending):
            self._flush(group, stamp)
