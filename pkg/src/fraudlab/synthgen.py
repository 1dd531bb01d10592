"""Seeded synthetic card transactions with planted, labeled fraud typologies.

Normal behaviour: per-card arrival processes with heterogeneous rates, hourly
weights peaking in the late evening, weekend and December uplift, and amounts
drawn around a log-normally distributed card-level mean.

Planted typologies (split evenly):

* ``high_amount_burst``     one large purchase, > card mean + 4 sigma after planting
* ``rapid_use_run``         short runs less than 60 s after the previous use
* ``late_night_high_value`` high-value purchases between 00:00 and 05:00
* ``category_outlier``      purchases in a category normal customers never use
* ``spree``                 ten or more purchases on one card in one UTC day
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .ingest import format_amount, format_timestamp_ms

TYPOLOGIES = ("high_amount_burst", "rapid_use_run", "late_night_high_value", "category_outlier", "spree")
NONE = "none"
MS_HOUR = 3_600_000
MS_DAY = 86_400_000

DEFAULT_MIX = {
    "pub": 0.25,
    "food truck": 0.20,
    "restaurant": 0.18,
    "bar": 0.14,
    "coffee shop": 0.10,
    "retail": 0.13,
}

# relative hourly volume; quiet small hours, peak 20:00-23:00
DEFAULT_HOURLY = (
    0.45, 0.40, 0.35, 0.30, 0.30, 0.35, 0.55, 0.80, 1.00, 1.05, 1.10, 1.30,
    1.50, 1.40, 1.20, 1.15, 1.25, 1.50, 1.80, 2.10, 2.60, 2.80, 2.70, 2.40,
)

DEFAULT_REGIONS = {"Metro-Y": 0.5, "Tier2-Z": 0.3, "Rural-X": 0.2}


@dataclass(frozen=True)
class GenConfig:
    n_transactions: int = 50_000
    n_cards: int = 500
    n_merchants: int = 120
    anomaly_rate: float = 0.015
    seed: int = 42
    category_mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))
    # card-level mean amount ~ lognormal(log(amount_median), card_sigma); rows ~ mean * N(1, within_cv)
    # median chosen so about 90% of amounts fall below 100
    amount_median: float = 55.89
    card_sigma: float = 0.4
    within_cv: float = 0.25
    # per-card base rates ~ gamma(activity_shape); larger shape = less heterogeneous
    activity_shape: float = 8.0
    hourly_weights: tuple = DEFAULT_HOURLY
    weekend_amplitude: float = 1.3
    december_amplitude: float = 1.4
    summer_amplitude: float = 1.1
    start: str = "2024-01-01"
    days: int = 365
    regions: dict = field(default_factory=lambda: dict(DEFAULT_REGIONS))
    min_normal_gap_s: float = 300.0
    # one idle spell per card (travel, card in a drawer), length in days
    dormant_days: tuple = (45, 150)
    outlier_category: str = "electronics"
    n_outlier_merchants: int = 3
    # planted amount ranges in currency units
    burst_amount: tuple = (1000.0, 2500.0)
    rapid_amount: tuple = (400.0, 1200.0)
    late_night_amount: tuple = (600.0, 2000.0)
    outlier_amount: tuple = (300.0, 1500.0)
    spree_amount: tuple = (300.0, 900.0)

    def validate(self):
        total = sum(self.category_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"category probabilities sum to {total}, expected 1")
        if any(p < 0 for p in self.category_mix.values()):
            raise ValueError("negative category probability")
        if not 0.0 < self.anomaly_rate < 0.1:
            raise ValueError(f"anomaly_rate must lie in (0, 0.1), got {self.anomaly_rate!r}")
        if self.n_transactions <= 0 or self.n_cards <= 0 or self.n_merchants < len(self.category_mix):
            raise ValueError("need positive transaction/card counts and one merchant per category")
        if len(self.hourly_weights) != 24:
            raise ValueError("hourly_weights needs 24 entries")
        if self.outlier_category in self.category_mix:
            raise ValueError("outlier category must not be part of the normal mix")

    @property
    def n_planted(self) -> int:
        return int(round(self.anomaly_rate * self.n_transactions))

    @property
    def start_ms(self) -> int:
        d = datetime.fromisoformat(self.start).replace(tzinfo=timezone.utc)
        return int(d.timestamp()) * 1000

    @property
    def end_ms(self) -> int:
        return self.start_ms + self.days * MS_DAY


@dataclass
class LabeledTransaction:
    txn_id: str
    card_id: str
    merchant_id: str
    category_label: str
    timestamp_ms: int
    amount_cents: int
    is_fraud: bool = False
    typology: str = NONE

    @property
    def amount(self) -> float:
        return self.amount_cents / 100.0


@dataclass
class Corpus:
    transactions: list
    cardholders: list
    merchants: list
    categories: list
    config: GenConfig

    def labels(self) -> dict:
        return {t.txn_id: (t.is_fraud, t.typology) for t in self.transactions}


def _rngs(seed):
    """Independent generators for each generation stage."""
    names = ("cards", "merchants", "counts", "times", "amounts", "choice", "plant")
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    return {k: np.random.default_rng(s) for k, s in zip(names, seqs)}


def _dimensions(cfg: GenConfig, rng_cards, rng_merch):
    cats = list(cfg.category_mix) + [cfg.outlier_category]
    categories = [{"category_id": f"K{i + 1:02d}", "label": lab} for i, lab in enumerate(cats)]
    cat_id = {c["label"]: c["category_id"] for c in categories}

    regions = list(cfg.regions)
    rp = np.array([cfg.regions[r] for r in regions], dtype=float)
    region_idx = rng_cards.choice(len(regions), size=cfg.n_cards, p=rp / rp.sum())
    cardholders = [{"card_id": f"C{i + 1:05d}", "name": f"Cardholder {i + 1:05d}", "region": regions[r]}
                   for i, r in enumerate(region_idx)]

    mix = list(cfg.category_mix.items())
    # every category keeps at least one merchant
    alloc = np.maximum(1, np.floor(np.array([p for _, p in mix]) * cfg.n_merchants)).astype(int)
    while alloc.sum() < cfg.n_merchants:
        alloc[int(np.argmax([p * cfg.n_merchants - a for (_, p), a in zip(mix, alloc)]))] += 1
    merchants = []
    by_cat: dict = {}
    k = 0
    for (label, _), cnt in zip(mix, alloc):
        for _ in range(cnt):
            k += 1
            mid = f"M{k:04d}"
            merchants.append({"merchant_id": mid, "name": f"{label.title()} {k:04d}", "category_id": cat_id[label]})
            by_cat.setdefault(label, []).append(mid)
    for j in range(cfg.n_outlier_merchants):
        mid = f"M9{j + 1:03d}"
        merchants.append({"merchant_id": mid, "name": f"{cfg.outlier_category.title()} {j + 1:03d}",
                          "category_id": cat_id[cfg.outlier_category]})
        by_cat.setdefault(cfg.outlier_category, []).append(mid)
    return cardholders, merchants, categories, by_cat


def _day_weights(cfg: GenConfig) -> np.ndarray:
    start = cfg.start_ms // MS_DAY
    days = np.arange(start, start + cfg.days)
    dow = (days + 3) % 7
    month = days.astype("datetime64[D]").astype("datetime64[M]").astype(np.int64) % 12 + 1
    w = np.ones(cfg.days)
    w[dow >= 5] *= cfg.weekend_amplitude
    w[month == 12] *= cfg.december_amplitude
    w[(month >= 6) & (month <= 8)] *= cfg.summer_amplitude
    return w / w.sum()


def _dormancy(cfg: GenConfig, rng) -> np.ndarray:
    """Per-card idle spell as (first_day, length) rows."""
    lo, hi = cfg.dormant_days
    length = rng.integers(lo, hi + 1, size=cfg.n_cards) if hi > 0 else np.zeros(cfg.n_cards, dtype=np.int64)
    first = rng.integers(0, np.maximum(cfg.days - length, 1))
    return np.column_stack([first, length])


def _sample_times(cfg: GenConfig, rng, size, idle=None) -> np.ndarray:
    hw = np.asarray(cfg.hourly_weights, dtype=float)
    p = _day_weights(cfg)
    day = rng.choice(cfg.days, size=size, p=p)
    if idle is not None:
        # redraw days that fall inside the card's idle spell
        for _ in range(100):
            bad = np.flatnonzero((day >= idle[:, 0]) & (day < idle[:, 0] + idle[:, 1]))
            if bad.size == 0:
                break
            day[bad] = rng.choice(cfg.days, size=bad.size, p=p)
    hour = rng.choice(24, size=size, p=hw / hw.sum())
    offset = rng.integers(0, MS_HOUR, size=size)
    return cfg.start_ms + day * MS_DAY + hour * MS_HOUR + offset


def _card_means(cfg: GenConfig, rng) -> np.ndarray:
    # stratified log-normal draws: one per equal-probability slice, shuffled across cards
    u = (rng.permutation(cfg.n_cards) + rng.random(cfg.n_cards)) / cfg.n_cards
    return np.exp(np.log(cfg.amount_median) + cfg.card_sigma * ndtri(u))


def generate(config: GenConfig = GenConfig()) -> Corpus:
    """Normal transactions only (``n_transactions - n_planted`` rows), deterministic under the seed."""
    cfg = config
    cfg.validate()
    r = _rngs(cfg.seed)
    cardholders, merchants, categories, by_cat = _dimensions(cfg, r["cards"], r["merchants"])
    n_normal = cfg.n_transactions - cfg.n_planted

    activity = r["counts"].gamma(cfg.activity_shape, 1.0, size=cfg.n_cards)
    per_card = r["counts"].multinomial(n_normal, activity / activity.sum())
    card_idx = np.repeat(np.arange(cfg.n_cards), per_card)

    times = _sample_times(cfg, r["times"], n_normal, _dormancy(cfg, r["times"])[card_idx])
    order = np.lexsort((times, card_idx))
    card_idx, times = card_idx[order], times[order]
    # normal customers rarely reuse a card within minutes
    gap = int(cfg.min_normal_gap_s * 1000)
    jitter = r["times"].integers(0, 60_000, size=n_normal)
    t = times.tolist()
    for i in range(1, n_normal):
        if card_idx[i] == card_idx[i - 1] and t[i] < t[i - 1] + gap:
            t[i] = t[i - 1] + gap + int(jitter[i])
    times = np.asarray(t, dtype=np.int64)

    means = _card_means(cfg, r["amounts"])
    noise = np.maximum(0.1, 1.0 + cfg.within_cv * r["amounts"].standard_normal(n_normal))
    cents = np.maximum(50, np.rint(means[card_idx] * noise * 100)).astype(np.int64)

    labels = list(cfg.category_mix)
    p = np.array([cfg.category_mix[k] for k in labels], dtype=float)
    cat = r["choice"].choice(len(labels), size=n_normal, p=p / p.sum())
    pick = r["choice"].random(n_normal)

    txns = []
    for i in range(n_normal):
        lab = labels[cat[i]]
        pool = by_cat[lab]
        txns.append(LabeledTransaction(
            txn_id="",
            card_id=cardholders[card_idx[i]]["card_id"],
            merchant_id=pool[int(pick[i] * len(pool))],
            category_label=lab,
            timestamp_ms=int(times[i]),
            amount_cents=int(cents[i]),
        ))
    corpus = Corpus(txns, cardholders, merchants, categories, cfg)
    corpus._by_cat = by_cat
    corpus._card_means = means
    return corpus


def _split_even(total: int, parts: int) -> list:
    base, rem = divmod(total, parts)
    return [base + (1 if i < rem else 0) for i in range(parts)]


def _chunks(count: int, size: int, minimum: int = 1) -> list:
    """Split ``count`` rows into events of about ``size`` rows, none below ``minimum``."""
    if count == 0:
        return []
    n_events = max(1, count // size)
    out = _split_even(count, n_events)
    if out[-1] < minimum:
        raise ValueError(f"corpus too small for {size}-row events")
    return out


def inject_anomalies(corpus: Corpus, config: GenConfig | None = None) -> Corpus:
    """Insert the planted rows, assign transaction ids in time order, return the full corpus."""
    cfg = config or corpus.config
    n_planted = cfg.n_planted
    if n_planted < len(TYPOLOGIES):
        raise ValueError(f"corpus too small: {n_planted} planted rows for {len(TYPOLOGIES)} typologies")
    counts = dict(zip(TYPOLOGIES, _split_even(n_planted, len(TYPOLOGIES))))
    if counts["spree"] < 10:
        raise ValueError("corpus too small: a spree needs at least 10 planted rows")

    rng = _rngs(cfg.seed)["plant"]
    by_cat = corpus._by_cat
    normals = corpus.transactions
    mix_labels = list(cfg.category_mix)
    mix_p = np.array([cfg.category_mix[k] for k in mix_labels], dtype=float)
    mix_p /= mix_p.sum()
    hw = np.asarray(cfg.hourly_weights, dtype=float)
    hw /= hw.sum()

    card_rows: dict = {}
    for i, t in enumerate(normals):
        card_rows.setdefault(t.card_id, []).append(i)
    cards = sorted(card_rows)
    busy_days = {(t.card_id, t.timestamp_ms // MS_DAY) for t in normals}

    def random_merchant():
        lab = mix_labels[int(rng.choice(len(mix_labels), p=mix_p))]
        pool = by_cat[lab]
        return lab, pool[int(rng.integers(len(pool)))]

    def random_time(hours=None):
        day = int(rng.integers(cfg.days))
        hour = int(rng.choice(24, p=hw)) if hours is None else int(rng.choice(hours))
        return cfg.start_ms + day * MS_DAY + hour * MS_HOUR + int(rng.integers(MS_HOUR))

    def cents(lo, hi):
        return int(round(rng.uniform(lo, hi) * 100))

    planted = []

    def plant(card, lab, merchant, ts, amount_cents, typ):
        planted.append(LabeledTransaction("", card, merchant, lab, int(ts), int(amount_cents), True, typ))

    # bursts get exclusive cards with enough history so a single row stands out
    eligible = [c for c in cards if len(card_rows[c]) >= 40]
    if not eligible:
        eligible = cards
    n_burst = counts["high_amount_burst"]
    burst_cards = list(rng.permutation(eligible)[:n_burst])
    while len(burst_cards) < n_burst:
        burst_cards.append(eligible[int(rng.integers(len(eligible)))])
    for card in burst_cards:
        amt = np.array([normals[i].amount for i in card_rows[card]])
        m, mu, var = amt.size, amt.mean(), amt.var()
        # smallest jump d with |x - mean'| > 5 sigma' once x itself is included
        need = math.sqrt(25.0 * var * (m + 1) / (m - 25)) if m > 25 else 10.0 * mu
        lab, merchant = random_merchant()
        value = max(rng.uniform(*cfg.burst_amount), mu + 1.1 * need)
        plant(card, lab, merchant, random_time(), round(value * 100), "high_amount_burst")

    others = [c for c in cards if c not in set(burst_cards)] or cards

    # rapid runs chained off an existing normal transaction
    for size in _chunks(counts["rapid_use_run"], 3):
        for _ in range(1000):
            card = others[int(rng.integers(len(others)))]
            rows = card_rows[card]
            k = int(rng.integers(len(rows)))
            anchor = normals[rows[k]].timestamp_ms
            gaps = rng.uniform(5.0, 50.0, size=size)
            stamps = anchor + np.rint(np.cumsum(gaps) * 1000).astype(np.int64)
            nxt = normals[rows[k + 1]].timestamp_ms if k + 1 < len(rows) else None
            if (nxt is None or nxt - stamps[-1] > 120_000) and stamps[-1] < cfg.end_ms:
                break
        else:
            raise ValueError("could not place a rapid-use run")
        for ts in stamps:
            lab, merchant = random_merchant()
            plant(card, lab, merchant, ts, cents(*cfg.rapid_amount), "rapid_use_run")

    for _ in range(counts["late_night_high_value"]):
        card = others[int(rng.integers(len(others)))]
        lab, merchant = random_merchant()
        plant(card, lab, merchant, random_time(hours=range(0, 5)), cents(*cfg.late_night_amount), "late_night_high_value")

    outlier_pool = by_cat[cfg.outlier_category]
    for _ in range(counts["category_outlier"]):
        card = others[int(rng.integers(len(others)))]
        merchant = outlier_pool[int(rng.integers(len(outlier_pool)))]
        plant(card, cfg.outlier_category, merchant, random_time(), cents(*cfg.outlier_amount), "category_outlier")

    for size in _chunks(counts["spree"], 10, minimum=10):
        for _ in range(1000):
            card = others[int(rng.integers(len(others)))]
            day = int(rng.integers(cfg.days))
            day_ms = cfg.start_ms + day * MS_DAY
            if (card, day_ms // MS_DAY) not in busy_days:
                break
        busy_days.add((card, day_ms // MS_DAY))
        start = day_ms + int(rng.integers(8, 12)) * MS_HOUR + int(rng.integers(MS_HOUR))
        stamps = start + np.rint(np.cumsum(rng.uniform(120.0, 1500.0, size=size)) * 1000).astype(np.int64)
        for ts in stamps:
            lab, merchant = random_merchant()
            plant(card, lab, merchant, ts, cents(*cfg.spree_amount), "spree")

    rows = normals + planted
    rows.sort(key=lambda t: (t.timestamp_ms, t.card_id, t.amount_cents))
    width = max(7, len(str(len(rows))))
    for i, t in enumerate(rows):
        t.txn_id = f"T{i + 1:0{width}d}"
    out = Corpus(rows, corpus.cardholders, corpus.merchants, corpus.categories, cfg)
    out._by_cat = by_cat
    return out


def generate_corpus(config: GenConfig = GenConfig()) -> Corpus:
    return inject_anomalies(generate(config), config)


def write_corpus(corpus: Corpus, directory) -> Path:
    """The four ingest CSVs plus labels.csv."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)

    def dump(name, header, rows):
        with open(d / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    txns = corpus.transactions
    dump("transactions.csv", ("txn_id", "card_id", "merchant_id", "timestamp", "amount"),
         ((t.txn_id, t.card_id, t.merchant_id, format_timestamp_ms(t.timestamp_ms), format_amount(t.amount_cents))
          for t in txns))
    dump("cardholders.csv", ("card_id", "name", "region"),
         ((c["card_id"], c["name"], c["region"]) for c in corpus.cardholders))
    dump("merchants.csv", ("merchant_id", "name", "category_id"),
         ((m["merchant_id"], m["name"], m["category_id"]) for m in corpus.merchants))
    dump("categories.csv", ("category_id", "label"), ((c["category_id"], c["label"]) for c in corpus.categories))
    dump("labels.csv", ("txn_id", "is_fraud", "typology"), ((t.txn_id, int(t.is_fraud), t.typology) for t in txns))
    return d


def read_labels(path) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            out[rec["txn_id"]] = (rec["is_fraud"] == "1", rec["typology"])
    return out


def typology_switch_stream(n: int = 64_000, positive_rate: float = 0.1, false_alarm: float = 0.02, seed: int = 0):
    """Labeled ARF feature stream whose positives move from the IF detector to the AE detector.

    First half: positives carry f_IF = 1. Second half: positives are visible
    only through f_AE = 1. Negatives get sparse false alarms on f_IF/f_OCSVM
    and small behavioral deltas. Yields (features, label) with label in {0, 1}.
    """
    from .arf import ArfFeatures

    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        pos = rng.random() < positive_rate
        second = i >= n // 2
        spend = float(rng.uniform(0.0, 0.5))
        tdelta = float(rng.uniform(0.0, 0.2)) if rng.random() < 0.1 else 0.0
        if pos:
            f = ArfFeatures(f_if=0.0 if second else 1.0, f_ocsvm=0.0, f_ae=1.0 if second else 0.0,
                            spend_delta=spend, time_delta=tdelta)
        else:
            f = ArfFeatures(f_if=float(rng.random() < false_alarm), f_ocsvm=float(rng.random() < false_alarm),
                            f_ae=0.0, spend_delta=spend, time_delta=tdelta)
        out.append((f, int(pos)))
    return out
