"""Behavioral, temporal and frequency features plus the standardized model matrix."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .ingest import CleanTransaction, format_timestamp_ms

FIRST_USE_SECONDS = 9999 * 60.0
MS_PER_DAY = 86_400_000
MATRIX_COLUMNS = ("amount", "amount_deviation", "seconds_since_last", "category_frequency")
_GROUP_STRIDE = 10**13  # > any millisecond timestamp before year 2286


@dataclass(frozen=True)
class CardholderStats:
    card_id: str
    mean_amount: float
    std_amount: float
    txn_count: int


def cardholder_stats(txns) -> dict[str, CardholderStats]:
    """Population mean and standard deviation of each card's amounts."""
    by_card: dict[str, list[int]] = {}
    for t in txns:
        by_card.setdefault(t.card_id, []).append(t.amount_cents)
    stats = {}
    for card, cents in by_card.items():
        a = np.asarray(cents, dtype=float) / 100.0
        mean = float(a.mean())
        std = float(np.sqrt(np.mean((a - mean) ** 2)))
        if np.all(a == a[0]):
            std = 0.0
        stats[card] = CardholderStats(card, mean, std, len(cents))
    return stats


def derive_temporal(timestamp_ms):
    """(hour, day_of_week, weekend, month) in UTC; Monday is day 0.

    Accepts a scalar or an array of millisecond timestamps.
    """
    ms = np.asarray(timestamp_ms, dtype=np.int64)
    hour = (ms // 3_600_000) % 24
    # 1970-01-01 was a Thursday
    dow = (ms // MS_PER_DAY + 3) % 7
    weekend = dow >= 5
    month = ms.astype("datetime64[ms]").astype("datetime64[M]").astype(np.int64) % 12 + 1
    if ms.ndim == 0:
        return int(hour), int(dow), bool(weekend), int(month)
    return hour, dow, weekend, month


def category_frequency(txns) -> dict[str, float]:
    counts: dict[str, int] = {}
    n = 0
    for t in txns:
        counts[t.category_label] = counts.get(t.category_label, 0) + 1
        n += 1
    if n == 0:
        raise ValueError("category frequency of an empty corpus")
    return {label: c / n for label, c in counts.items()}


@dataclass
class Behavioral:
    amount_deviation: np.ndarray
    seconds_since_last: np.ndarray
    first_use: np.ndarray
    rolling_count_7d: np.ndarray
    rolling_sum_7d: np.ndarray
    rolling_count_30d: np.ndarray
    rolling_sum_30d: np.ndarray


def _card_groups(card_ids):
    """Integer group index per row for rows already grouped by card."""
    group = np.zeros(len(card_ids), dtype=np.int64)
    g = 0
    for i in range(1, len(card_ids)):
        if card_ids[i] != card_ids[i - 1]:
            g += 1
        group[i] = g
    return group


def derive_behavioral(txns, stats: dict[str, CardholderStats] | None = None) -> Behavioral:
    """Per-row deviation, inter-arrival time and strictly-prior rolling windows.

    ``txns`` must be sorted by (card_id, timestamp). Intervals touching a
    suspect timestamp fall back to the first-use sentinel, and suspect rows do
    not count toward rolling windows.
    """
    txns = list(txns)
    n = len(txns)
    if stats is None:
        stats = cardholder_stats(txns)
    cards = [t.card_id for t in txns]
    ts = np.fromiter((t.timestamp_ms for t in txns), dtype=np.int64, count=n)
    amount = np.fromiter((t.amount_cents for t in txns), dtype=float, count=n) / 100.0
    suspect = np.fromiter((t.timestamp_suspect for t in txns), dtype=bool, count=n)

    for i in range(1, n):
        if cards[i] < cards[i - 1] or (cards[i] == cards[i - 1] and ts[i] < ts[i - 1]):
            raise ValueError(f"input not sorted by (card_id, timestamp) at row {i}")

    means = np.array([stats[c].mean_amount for c in cards], dtype=float)
    deviation = amount - means

    group = _card_groups(cards)
    same_card = np.zeros(n, dtype=bool)
    same_card[1:] = group[1:] == group[:-1]
    gap = np.full(n, FIRST_USE_SECONDS)
    valid = same_card.copy()
    valid[1:] &= ~suspect[1:] & ~suspect[:-1]
    valid[0] = False
    gap[1:] = np.where(valid[1:], (ts[1:] - ts[:-1]) / 1000.0, FIRST_USE_SECONDS)
    # a sentinel interval counts as first use for downstream rules
    first_use = ~valid

    key = group * _GROUP_STRIDE + ts
    group_start = np.searchsorted(group, group, side="left")
    weight = (~suspect).astype(float)
    cw = np.concatenate(([0.0], np.cumsum(weight)))
    cs = np.concatenate(([0.0], np.cumsum(weight * amount)))
    idx = np.arange(n)
    rolling = {}
    for days in (7, 30):
        lo = np.searchsorted(key, key - days * MS_PER_DAY, side="left")
        lo = np.maximum(lo, group_start)
        lo = np.minimum(lo, idx)
        rolling[days] = (np.rint(cw[idx] - cw[lo]).astype(np.int64), cs[idx] - cs[lo])

    return Behavioral(
        amount_deviation=deviation,
        seconds_since_last=gap,
        first_use=first_use,
        rolling_count_7d=rolling[7][0],
        rolling_sum_7d=rolling[7][1],
        rolling_count_30d=rolling[30][0],
        rolling_sum_30d=rolling[30][1],
    )


@dataclass
class FeatureTable:
    """Every engineered field for a corpus, one array per column (row order = input order)."""

    txn_id: list
    card_id: list
    merchant_id: list
    category_label: list
    region: list
    timestamp_ms: np.ndarray
    amount: np.ndarray
    amount_deviation: np.ndarray
    seconds_since_last: np.ndarray
    first_use: np.ndarray
    category_frequency: np.ndarray
    hour: np.ndarray
    day_of_week: np.ndarray
    weekend: np.ndarray
    month: np.ndarray
    rolling_count_7d: np.ndarray
    rolling_sum_7d: np.ndarray
    rolling_count_30d: np.ndarray
    rolling_sum_30d: np.ndarray
    timestamp_suspect: np.ndarray
    stats: dict = field(default_factory=dict)
    frequencies: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.txn_id)

    def raw_matrix(self) -> np.ndarray:
        return np.column_stack([self.amount, self.amount_deviation,
                                self.seconds_since_last, self.category_frequency])

    @property
    def day_index(self) -> np.ndarray:
        return self.timestamp_ms // MS_PER_DAY


def build_features(txns) -> FeatureTable:
    txns = list(txns)
    n = len(txns)
    stats = cardholder_stats(txns)
    freqs = category_frequency(txns)
    beh = derive_behavioral(txns, stats)
    ts = np.fromiter((t.timestamp_ms for t in txns), dtype=np.int64, count=n)
    hour, dow, weekend, month = derive_temporal(ts)
    return FeatureTable(
        txn_id=[t.txn_id for t in txns],
        card_id=[t.card_id for t in txns],
        merchant_id=[t.merchant_id for t in txns],
        category_label=[t.category_label for t in txns],
        region=[t.region for t in txns],
        timestamp_ms=ts,
        amount=np.fromiter((t.amount_cents for t in txns), dtype=float, count=n) / 100.0,
        amount_deviation=beh.amount_deviation,
        seconds_since_last=beh.seconds_since_last,
        first_use=beh.first_use,
        category_frequency=np.array([freqs[t.category_label] for t in txns], dtype=float),
        hour=hour,
        day_of_week=dow,
        weekend=weekend,
        month=month,
        rolling_count_7d=beh.rolling_count_7d,
        rolling_sum_7d=beh.rolling_sum_7d,
        rolling_count_30d=beh.rolling_count_30d,
        rolling_sum_30d=beh.rolling_sum_30d,
        timestamp_suspect=np.fromiter((t.timestamp_suspect for t in txns), dtype=bool, count=n),
        stats=stats,
        frequencies=freqs,
    )


@dataclass(frozen=True)
class StandardizationParams:
    mean: np.ndarray
    std: np.ndarray
    std_floor: float = 1e-12

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / np.maximum(self.std, self.std_floor)

    def inverse_transform(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * np.maximum(self.std, self.std_floor) + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "std_floor": self.std_floor}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float), float(d["std_floor"]))


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    params: StandardizationParams
    columns: tuple = MATRIX_COLUMNS

    @property
    def n(self) -> int:
        return self.values.shape[0]


def fit_standardization(raw, std_floor: float = 1e-12) -> StandardizationParams:
    raw = np.asarray(raw, dtype=float)
    mean = raw.mean(axis=0)
    std = np.sqrt(np.mean((raw - mean) ** 2, axis=0))
    # exactly constant columns get std 0 so they map to 0 rather than rounding noise
    std[np.all(raw == raw[:1], axis=0)] = 0.0
    return StandardizationParams(mean, std, std_floor)


def build_matrix(source) -> FeatureMatrix:
    """z-score the four model columns (population std, floored divisor)."""
    raw = source.raw_matrix() if isinstance(source, FeatureTable) else np.asarray(source, dtype=float)
    if raw.ndim != 2 or raw.shape[1] != len(MATRIX_COLUMNS):
        raise ValueError(f"expected an n x {len(MATRIX_COLUMNS)} matrix, got shape {raw.shape}")
    params = fit_standardization(raw)
    return FeatureMatrix(params.transform(raw), params)


CSV_COLUMNS = (
    "txn_id", "card_id", "merchant_id", "category_label", "timestamp",
    "amount", "amount_deviation", "seconds_since_last", "category_frequency",
    "hour", "day_of_week", "weekend", "month",
    "rolling_count_7d", "rolling_sum_7d", "rolling_count_30d", "rolling_sum_30d",
    "z_amount", "z_amount_deviation", "z_seconds_since_last", "z_category_frequency",
)


def write_feature_csv(path, table: FeatureTable, matrix: FeatureMatrix) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        z = matrix.values
        for i in range(len(table)):
            w.writerow([
                table.txn_id[i], table.card_id[i], table.merchant_id[i], table.category_label[i],
                format_timestamp_ms(int(table.timestamp_ms[i])),
                repr(float(table.amount[i])), repr(float(table.amount_deviation[i])),
                repr(float(table.seconds_since_last[i])), repr(float(table.category_frequency[i])),
                int(table.hour[i]), int(table.day_of_week[i]), int(table.weekend[i]), int(table.month[i]),
                int(table.rolling_count_7d[i]), repr(float(table.rolling_sum_7d[i])),
                int(table.rolling_count_30d[i]), repr(float(table.rolling_sum_30d[i])),
                *(repr(float(v)) for v in z[i]),
            ])


def read_feature_csv(path):
    """Rows of the exported feature table as dicts of floats/ints/strings."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            out.append(rec)
    return out


def sort_key(t: CleanTransaction):
    return (t.card_id, t.timestamp_ms, t.txn_id)
