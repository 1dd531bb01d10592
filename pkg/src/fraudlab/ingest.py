"""Load the four relational CSV tables, join them, and clean implausible values."""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import Decimal, InvalidOperation
from pathlib import Path

import numpy as np

from .quantile import nearest_rank_index

TRANSACTION_COLUMNS = ("txn_id", "card_id", "merchant_id", "timestamp", "amount")
CARDHOLDER_COLUMNS = ("card_id", "name", "region")
MERCHANT_COLUMNS = ("merchant_id", "name", "category_id")
CATEGORY_COLUMNS = ("category_id", "label")

TABLE_FILES = {
    "transactions": "transactions.csv",
    "cardholders": "cardholders.csv",
    "merchants": "merchants.csv",
    "categories": "categories.csv",
}

UNKNOWN = "unknown"


class IngestError(ValueError):
    """A table could not be read or violates its schema."""


@dataclass
class RawTables:
    transactions: list = field(default_factory=list)
    cardholders: list = field(default_factory=list)
    merchants: list = field(default_factory=list)
    categories: list = field(default_factory=list)


@dataclass(frozen=True)
class CleanTransaction:
    txn_id: str
    card_id: str
    merchant_id: str
    category_label: str
    timestamp_ms: int
    amount_cents: int
    cap_applied: bool = False
    timestamp_suspect: bool = False
    region: str = UNKNOWN
    # position in the source file; used to detect out-of-order arrivals
    seq: int = 0

    @property
    def amount(self) -> float:
        return self.amount_cents / 100.0

    @property
    def timestamp(self) -> datetime:
        return datetime.fromtimestamp(self.timestamp_ms / 1000.0, tz=timezone.utc)


@dataclass
class IngestReport:
    rows_in: int = 0
    rows_out: int = 0
    dropped_missing_id: int = 0
    capped: int = 0
    suspect_timestamps: int = 0
    cap_value: float | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def parse_timestamp_ms(text: str) -> int:
    """ISO-8601 text to integer milliseconds since the Unix epoch (UTC)."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - datetime(1970, 1, 1, tzinfo=timezone.utc)
    return (delta.days * 86_400 + delta.seconds) * 1000 + delta.microseconds // 1000


def format_timestamp_ms(ms: int) -> str:
    dt = datetime.fromtimestamp(ms // 1000, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + f".{ms % 1000:03d}Z"


def parse_amount_cents(text: str) -> int:
    try:
        value = Decimal(text.strip())
    except InvalidOperation:
        raise ValueError(f"non-numeric amount {text!r}") from None
    if not value.is_finite():
        raise ValueError(f"non-finite amount {text!r}")
    if value < 0:
        raise ValueError(f"negative amount {text!r}")
    return int((value * 100).to_integral_value())


def format_amount(cents: int) -> str:
    return f"{cents // 100}.{cents % 100:02d}"


def _read_csv(path, columns, parse_row=None, key=None):
    path = Path(path)
    if not path.exists():
        raise IngestError(f"missing file: {path}")
    rows = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file, expected header {','.join(columns)}") from None
        if tuple(h.strip() for h in header) != columns:
            raise IngestError(f"{path}: line 1: expected header {','.join(columns)}, got {','.join(header)}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(columns):
                raise IngestError(f"{path}: line {line}: expected {len(columns)} fields, got {len(row)}")
            record = dict(zip(columns, (v.strip() for v in row)))
            if parse_row is not None:
                try:
                    parse_row(record)
                except ValueError as exc:
                    raise IngestError(f"{path}: line {line}: {exc}") from None
            if key is not None:
                k = record[key]
                if k in seen:
                    raise IngestError(f"{path}: line {line}: duplicate {key} {k!r}")
                seen.add(k)
            rows.append(record)
    return rows


def _parse_transaction(record):
    record["timestamp"] = parse_timestamp_ms(record["timestamp"])
    record["amount"] = parse_amount_cents(record["amount"])


def load_tables(transactions, cardholders, merchants, categories) -> RawTables:
    """Read the four CSV files verbatim (arity and type checks only)."""
    return RawTables(
        transactions=_read_csv(transactions, TRANSACTION_COLUMNS, _parse_transaction),
        cardholders=_read_csv(cardholders, CARDHOLDER_COLUMNS, key="card_id"),
        merchants=_read_csv(merchants, MERCHANT_COLUMNS, key="merchant_id"),
        categories=_read_csv(categories, CATEGORY_COLUMNS, key="category_id"),
    )


def load_dir(directory) -> RawTables:
    directory = Path(directory)
    return load_tables(*(directory / name for name in TABLE_FILES.values()))


def join_unified(raw: RawTables) -> tuple[list[CleanTransaction], IngestReport]:
    """Resolve card, merchant and category for every transaction.

    Rows whose card or merchant is missing from the dimension tables are
    dropped and counted. Output is sorted by (card_id, timestamp, txn_id).
    """
    regions = {r["card_id"]: (r.get("region") or UNKNOWN) for r in raw.cardholders}
    labels = {c["category_id"]: (c.get("label") or UNKNOWN) for c in raw.categories}
    merchant_label = {m["merchant_id"]: labels.get(m.get("category_id", ""), UNKNOWN) for m in raw.merchants}

    out = []
    dropped = 0
    for seq, t in enumerate(raw.transactions):
        card, merchant = t["card_id"], t["merchant_id"]
        if not card or not merchant or card not in regions or merchant not in merchant_label:
            dropped += 1
            continue
        out.append(CleanTransaction(
            txn_id=t["txn_id"],
            card_id=card,
            merchant_id=merchant,
            category_label=merchant_label[merchant],
            timestamp_ms=int(t["timestamp"]),
            amount_cents=int(t["amount"]),
            region=regions[card],
            seq=seq,
        ))
    out.sort(key=lambda r: (r.card_id, r.timestamp_ms, r.txn_id))
    report = IngestReport(rows_in=len(raw.transactions), rows_out=len(out), dropped_missing_id=dropped)
    return out, report


def clean_values(txns, cap_quantile: float = 0.999, ingested_at_ms: int | None = None,
                 cap: bool = True) -> tuple[list[CleanTransaction], IngestReport]:
    """Cap extreme amounts and flag implausible timestamps.

    Amounts strictly above the nearest-rank ``cap_quantile`` are replaced by it.
    A timestamp is suspect when it is later than ``ingested_at_ms`` or earlier
    than a same-card row that arrived before it in the source file.
    Suspect rows are kept.
    """
    if not 0.0 < cap_quantile <= 1.0:
        raise ValueError(f"cap_quantile must lie in (0, 1], got {cap_quantile!r}")
    txns = list(txns)
    report = IngestReport(rows_in=len(txns), rows_out=len(txns))
    if not txns:
        return txns, report

    cap_value = None
    if cap:
        amounts = np.fromiter((t.amount_cents for t in txns), dtype=np.int64, count=len(txns))
        idx = nearest_rank_index(cap_quantile, amounts.size)
        cap_value = int(np.partition(amounts, idx)[idx])
        report.cap_value = cap_value / 100.0

    # latest timestamp seen per card in arrival order
    suspect_ids = set()
    latest = {}
    for t in sorted(txns, key=lambda r: r.seq):
        prev = latest.get(t.card_id)
        if prev is not None and t.timestamp_ms < prev:
            suspect_ids.add(t.txn_id)
        else:
            latest[t.card_id] = t.timestamp_ms

    out = []
    for t in txns:
        changes = {}
        if cap_value is not None and t.amount_cents > cap_value:
            changes["amount_cents"] = cap_value
            changes["cap_applied"] = True
        future = ingested_at_ms is not None and t.timestamp_ms > ingested_at_ms
        if future or t.txn_id in suspect_ids:
            changes["timestamp_suspect"] = True
        out.append(dataclasses.replace(t, **changes) if changes else t)

    report.capped = sum(t.cap_applied for t in out)
    report.suspect_timestamps = sum(t.timestamp_suspect for t in out)
    return out, report


def ingest_dir(directory, cap_quantile: float = 0.999, ingested_at_ms: int | None = None, cap: bool = True):
    """load + join + clean; returns rows and the merged report."""
    raw = load_dir(directory)
    rows, join_report = join_unified(raw)
    rows, clean_report = clean_values(rows, cap_quantile, ingested_at_ms, cap)
    clean_report.rows_in = join_report.rows_in
    clean_report.dropped_missing_id = join_report.dropped_missing_id
    return rows, clean_report
