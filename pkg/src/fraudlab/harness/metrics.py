"""Detection metrics against planted labels."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class EvalRow:
    name: str
    tp: int
    fp: int
    tn: int
    fn: int
    detection_rate: float
    false_positive_rate: float
    precision: float
    auc_roc: float

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def auc_roc(labels, scores) -> float:
    """Mann-Whitney U / (P N) with midranks for tied scores."""
    y = np.asarray(labels, dtype=bool)
    s = np.asarray(scores, dtype=float)
    if y.shape != s.shape:
        raise ValueError("labels and scores differ in length")
    p = int(y.sum())
    q = y.size - p
    if p == 0 or q == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - p * (p + 1) / 2.0
    return float(u / (p * q))


def metrics(labels, flags, scores, name: str = "") -> EvalRow:
    y = np.asarray(labels, dtype=bool)
    f = np.asarray(flags, dtype=bool)
    if y.shape != f.shape:
        raise ValueError("labels and flags differ in length")
    if y.all() or not y.any():
        raise ValueError("degenerate label set: need at least one positive and one negative")
    tp = int(np.sum(y & f))
    fp = int(np.sum(~y & f))
    tn = int(np.sum(~y & ~f))
    fn = int(np.sum(y & ~f))
    return EvalRow(
        name=name, tp=tp, fp=fp, tn=tn, fn=fn,
        detection_rate=tp / (tp + fn),
        false_positive_rate=fp / (fp + tn),
        precision=tp / (tp + fp) if tp + fp else 0.0,
        auc_roc=auc_roc(y, scores),
    )


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    positives: int = 0
    n: int = 0
    seed: int = 0
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def row(self, name: str) -> EvalRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def check(self) -> None:
        for r in self.rows:
            if r.tp + r.fn != self.positives or r.n != self.n:
                raise AssertionError(f"row {r.name} does not reconcile with the label counts")

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "n": self.n, "positives": self.positives,
                           "rows": [asdict(r) for r in self.rows], "extra": self.extra,
                           "config": self.config}, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls([EvalRow(**r) for r in d["rows"]], d["positives"], d["n"], d["seed"], d["config"], d["extra"])

    def to_csv(self, percent: bool = False) -> str:
        """Fractions by default; ``percent=True`` renders rates as percentages."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["detector", "tp", "fp", "tn", "fn", "detection_rate", "false_positive_rate", "precision", "auc_roc"])
        scale = 100.0 if percent else 1.0
        for r in self.rows:
            w.writerow([r.name, r.tp, r.fp, r.tn, r.fn,
                        *(f"{v * scale:.4f}" if percent else repr(v)
                          for v in (r.detection_rate, r.false_positive_rate, r.precision, r.auc_roc))])
        return buf.getvalue()
