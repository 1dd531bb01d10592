"""Behavioral indicators, composite/weighted risk scores, entity ratios and the review queue."""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import numpy as np

from .quantile import nearest_rank

RAPID_SECONDS = 60.0
SPREE_COUNT = 10
SIGMA_RULE = 3.0
SEQUENCE_JUMP = 2.0
HIGH_AMOUNT_QUANTILE = 0.99
HIGH_RISK_QUANTILE = 0.95
ENTITY_RATIO_CUT = 0.20

DEFAULT_WEIGHTS = {"amount": 0.05, "unusual_spend": 0.84, "suspicious_sequence": 0.76, "rapid_use": 0.53}

WINDOWS = (("Night", 0, 6), ("Morning", 6, 12), ("Afternoon", 12, 18), ("Evening", 18, 24))

COMPOSITE_FLAGS = ("if_flag", "ocsvm_flag", "ae_flag", "unusual_spend", "rapid_use", "spending_spree")


@dataclass(frozen=True)
class IndicatorFlags:
    if_flag: bool = False
    ocsvm_flag: bool = False
    ae_flag: bool = False
    unusual_spend: bool = False
    rapid_use: bool = False
    spending_spree: bool = False
    suspicious_sequence: bool = False
    high_amount: bool = False


@dataclass(frozen=True)
class RiskScore:
    composite: int
    weighted: float
    high_risk: bool


@dataclass(frozen=True)
class EntityRisk:
    entity_id: str
    txn_count: int
    flagged_count: int
    fraud_ratio: float
    high_risk: bool = False


@dataclass(frozen=True)
class TimeWindowStats:
    window: str
    txn_count: int
    mean_risk: float


@dataclass
class FlagTable:
    """Column-wise IndicatorFlags for a whole corpus."""

    if_flag: np.ndarray
    ocsvm_flag: np.ndarray
    ae_flag: np.ndarray
    unusual_spend: np.ndarray
    rapid_use: np.ndarray
    spending_spree: np.ndarray
    suspicious_sequence: np.ndarray
    high_amount: np.ndarray

    def __len__(self):
        return self.if_flag.size

    def row(self, i) -> IndicatorFlags:
        return IndicatorFlags(**{f.name: bool(getattr(self, f.name)[i]) for f in fields(self)})

    def matrix(self, names=None) -> np.ndarray:
        names = names or [f.name for f in fields(self)]
        return np.column_stack([getattr(self, k).astype(float) for k in names])


def unusual_spend(amount, mean, std):
    """|amount - mean| > 3 sigma; never true for a zero-variance card."""
    amount, mean, std = (np.asarray(v, dtype=float) for v in (amount, mean, std))
    return (std > 0) & (np.abs(amount - mean) > SIGMA_RULE * std)


def rapid_use(seconds_since_last, first_use):
    return (np.asarray(seconds_since_last, dtype=float) < RAPID_SECONDS) & ~np.asarray(first_use, dtype=bool)


def suspicious_sequence(amount, prior_amount):
    """Relative jump from the prior same-card amount above 200%; undefined (False) for a zero prior."""
    amount = np.asarray(amount, dtype=float)
    prior = np.asarray(prior_amount, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(amount - prior) / prior
    return (prior > 0) & np.isfinite(ratio) & (ratio > SEQUENCE_JUMP)


def behavioral_flags(amount, card_mean, card_std, seconds_since_last, first_use,
                     card_day_count, prior_amount, high_amount_cut) -> IndicatorFlags:
    """Indicator flags for a single transaction (detector flags left False)."""
    return IndicatorFlags(
        unusual_spend=bool(unusual_spend(amount, card_mean, card_std)),
        rapid_use=bool(rapid_use(seconds_since_last, first_use)),
        spending_spree=card_day_count >= SPREE_COUNT,
        suspicious_sequence=bool(suspicious_sequence(amount, prior_amount if prior_amount is not None else 0.0)),
        high_amount=amount > high_amount_cut,
    )


def prior_amounts(table) -> np.ndarray:
    """Previous same-card amount per row (0 for a card's first row); table sorted by card/time."""
    prior = np.zeros(len(table))
    same = np.array([table.card_id[i] == table.card_id[i - 1] for i in range(1, len(table))], dtype=bool)
    prior[1:] = np.where(same, table.amount[:-1], 0.0)
    return prior


def card_day_counts(table) -> np.ndarray:
    """Transactions on the same card and UTC calendar day, per row."""
    keys = list(zip(table.card_id, table.day_index.tolist()))
    counts: dict = {}
    for k in keys:
        counts[k] = counts.get(k, 0) + 1
    return np.array([counts[k] for k in keys], dtype=np.int64)


def corpus_flags(table, if_flag, ocsvm_flag, ae_flag) -> tuple[FlagTable, float]:
    """All indicators for a FeatureTable; also returns the high-amount cut (99th pct)."""
    n = len(table)
    means = np.array([table.stats[c].mean_amount for c in table.card_id])
    stds = np.array([table.stats[c].std_amount for c in table.card_id])
    cut = nearest_rank(table.amount, HIGH_AMOUNT_QUANTILE)
    flags = FlagTable(
        if_flag=np.asarray(if_flag, dtype=bool).reshape(n),
        ocsvm_flag=np.asarray(ocsvm_flag, dtype=bool).reshape(n),
        ae_flag=np.asarray(ae_flag, dtype=bool).reshape(n),
        unusual_spend=unusual_spend(table.amount, means, stds),
        rapid_use=rapid_use(table.seconds_since_last, table.first_use),
        spending_spree=card_day_counts(table) >= SPREE_COUNT,
        suspicious_sequence=suspicious_sequence(table.amount, prior_amounts(table)),
        high_amount=table.amount > cut,
    )
    return flags, cut


def composite_score(flags) -> np.ndarray | int:
    """Count of the six contributing flags (IF, OCSVM, AE, unusual spend, rapid use, spree)."""
    if isinstance(flags, IndicatorFlags):
        return sum(int(getattr(flags, k)) for k in COMPOSITE_FLAGS)
    return sum(np.asarray(getattr(flags, k), dtype=np.int64) for k in COMPOSITE_FLAGS)


def amount_norm(amount, high_amount_cut: float):
    if high_amount_cut <= 0:
        return np.zeros_like(np.asarray(amount, dtype=float))
    return np.clip(np.asarray(amount, dtype=float) / high_amount_cut, 0.0, 1.0)


def weighted_score(flags, amount_norm_value, weights=None):
    """0.05 * amount_norm + 0.84 * unusual + 0.76 * sequence + 0.53 * rapid (weights overridable)."""
    w = DEFAULT_WEIGHTS if weights is None else {**DEFAULT_WEIGHTS, **weights}
    a = np.asarray(amount_norm_value, dtype=float)
    s = (w["amount"] * a
         + w["unusual_spend"] * np.asarray(flags.unusual_spend, dtype=float)
         + w["suspicious_sequence"] * np.asarray(flags.suspicious_sequence, dtype=float)
         + w["rapid_use"] * np.asarray(flags.rapid_use, dtype=float))
    return float(s) if np.ndim(s) == 0 else s


def high_risk_mark(scores, quantile: float = HIGH_RISK_QUANTILE) -> np.ndarray:
    """Strictly above the nearest-rank 95th percentile; rows tied at the cut are excluded."""
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise ValueError("high-risk mark of an empty score list")
    return s > nearest_rank(s, quantile)


def entity_fraud_ratio(entity_ids, composite, top: int | None = None) -> list[EntityRisk]:
    """Per-entity share of rows with composite >= 1, ranked by ratio, then volume, then id."""
    counts: dict = {}
    flagged: dict = {}
    for e, c in zip(entity_ids, np.asarray(composite)):
        counts[e] = counts.get(e, 0) + 1
        flagged[e] = flagged.get(e, 0) + int(c >= 1)
    out = [EntityRisk(e, counts[e], flagged[e], flagged[e] / counts[e], flagged[e] / counts[e] > ENTITY_RATIO_CUT)
           for e in counts]
    out.sort(key=lambda r: (-r.fraud_ratio, -r.txn_count, r.entity_id))
    return out if top is None else out[:top]


def window_of_hour(hour: int) -> str:
    for name, start, end in WINDOWS:
        if start <= hour < end:
            return name
    raise ValueError(f"hour out of range: {hour}")


def time_window_risk(hours, scores) -> list[TimeWindowStats]:
    hours = np.asarray(hours)
    scores = np.asarray(scores, dtype=float)
    out = []
    for name, start, end in WINDOWS:
        m = (hours >= start) & (hours < end)
        cnt = int(m.sum())
        out.append(TimeWindowStats(name, cnt, float(scores[m].mean()) if cnt else float("nan")))
    return out


def indicator_correlations(flag_matrix) -> np.ndarray:
    """Pearson matrix over 0/1 columns; NaN where a column has zero variance."""
    M = np.asarray(flag_matrix, dtype=float)
    Z = M - M.mean(axis=0)
    sd = np.sqrt((Z * Z).mean(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        R = (Z.T @ Z / M.shape[0]) / np.outer(sd, sd)
    R[np.outer(sd == 0, np.ones_like(sd, bool)) | np.outer(np.ones_like(sd, bool), sd == 0)] = np.nan
    idx = np.flatnonzero(sd > 0)
    R[idx, idx] = 1.0
    return R


def review_predicate(high_risk, flags) -> np.ndarray:
    """Combined metric: high-risk mark OR high amount OR suspicious sequence OR rapid use."""
    return (np.asarray(high_risk, bool) | np.asarray(flags.high_amount, bool)
            | np.asarray(flags.suspicious_sequence, bool) | np.asarray(flags.rapid_use, bool))


def review_queue(predicate, weighted) -> tuple[np.ndarray, float]:
    """Row indices in the queue ordered by weighted score (desc, then row index) and the queue fraction."""
    predicate = np.asarray(predicate, bool)
    weighted = np.asarray(weighted, dtype=float)
    rows = np.flatnonzero(predicate)
    order = np.lexsort((rows, -weighted[rows]))
    frac = rows.size / predicate.size if predicate.size else 0.0
    return rows[order], frac


@dataclass
class RiskResult:
    flags: FlagTable
    composite: np.ndarray
    weighted: np.ndarray
    high_risk: np.ndarray
    review: np.ndarray
    queue: np.ndarray
    queue_fraction: float
    high_amount_cut: float


def score_corpus(table, if_flag, ocsvm_flag, ae_flag, weights=None, high_risk_on: str = "composite") -> RiskResult:
    flags, cut = corpus_flags(table, if_flag, ocsvm_flag, ae_flag)
    composite = composite_score(flags)
    weighted = weighted_score(flags, amount_norm(table.amount, cut), weights)
    high = high_risk_mark(composite if high_risk_on == "composite" else weighted)
    review = review_predicate(high, flags)
    queue, frac = review_queue(review, weighted)
    return RiskResult(flags, composite, np.asarray(weighted, float), high, review, queue, frac, cut)


def write_risk_csv(path, table, result: RiskResult) -> None:
    names = [f.name for f in fields(FlagTable)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["txn_id", *names, "composite", "weighted", "high_risk", "review"])
        for i in range(len(table)):
            w.writerow([table.txn_id[i], *(int(getattr(result.flags, k)[i]) for k in names),
                        int(result.composite[i]), repr(float(result.weighted[i])),
                        int(result.high_risk[i]), int(result.review[i])])
