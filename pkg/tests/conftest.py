import csv
from pathlib import Path

import numpy as np
import pytest

from fraudlab import synthgen
from fraudlab.ingest import CleanTransaction

BASE_MS = 1_704_067_200_000  # 2024-01-01T00:00:00Z


def make_txn(txn_id, card, seconds, amount, category="pub", merchant="M1", suspect=False, seq=0, region="Metro-Y"):
    return CleanTransaction(txn_id=txn_id, card_id=card, merchant_id=merchant, category_label=category,
                            timestamp_ms=BASE_MS + int(round(seconds * 1000)), amount_cents=int(round(amount * 100)),
                            timestamp_suspect=suspect, region=region, seq=seq)


def write_csv(path, header, rows):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


@pytest.fixture(scope="session")
def small_corpus():
    """6,000-row corpus shared by the integration-style tests."""
    return synthgen.generate_corpus(synthgen.GenConfig(n_transactions=6000, n_cards=100, n_merchants=40, seed=7))


@pytest.fixture(scope="session")
def small_corpus_dir(small_corpus, tmp_path_factory):
    return synthgen.write_corpus(small_corpus, tmp_path_factory.mktemp("corpus"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance verdict; the terminal summary prints every line."""
    def record(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 10):
        ok, detail = ACCEPTANCE.get(number, (None, "not run"))
        verdict = {True: "PASS", False: "FAIL", None: "----"}[ok]
        terminalreporter.write_line(f"criterion {number}: {verdict}  {detail}")
