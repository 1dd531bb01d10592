import io
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fraudlab import arf, autoencoder, cluster_map, iforest, ocsvm
from fraudlab.features import build_matrix
from fraudlab.harness import persist, report
from fraudlab.harness.cli import main, stream_scores
from fraudlab.harness.config import PipelineConfig, load_config, parse_ini
from fraudlab.harness.metrics import EvalReport, auc_roc, metrics
from fraudlab.harness.pipeline import Pipeline, StageError, run_pipeline
from oracles import pairwise_auc


# metrics

def test_auc_extremes():
    y = np.array([0, 0, 1, 1], bool)
    assert auc_roc(y, [0.1, 0.2, 0.8, 0.9]) == 1.0
    assert auc_roc(y, [0.9, 0.8, 0.2, 0.1]) == 0.0
    assert auc_roc(y, [0.5] * 4) == 0.5


@pytest.mark.parametrize("seed", range(5))
def test_auc_matches_pairwise_oracle(seed):
    rng = np.random.default_rng(seed)
    n = 200 if seed else 500
    y = rng.random(n) < 0.3
    s = rng.integers(0, 20, n).astype(float)  # plenty of ties
    assert abs(auc_roc(y, s) - pairwise_auc(y, s)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 5)), min_size=2, max_size=120))
def test_auc_property(pairs):
    y = np.array([p[0] for p in pairs])
    s = np.array([p[1] for p in pairs], float)
    if y.all() or not y.any():
        with pytest.raises(ValueError):
            auc_roc(y, s)
        return
    assert abs(auc_roc(y, s) - pairwise_auc(y, s)) <= 1e-12


def test_metrics_confusion_identity(rng):
    y = rng.random(300) < 0.2
    f = rng.random(300) < 0.1
    r = metrics(y, f, rng.random(300), "x")
    assert r.tp + r.fp + r.tn + r.fn == 300 and r.tp + r.fn == y.sum()
    assert r.detection_rate == r.tp / (r.tp + r.fn)
    assert r.false_positive_rate == r.fp / (r.fp + r.tn)
    assert metrics(y, np.zeros(300, bool), rng.random(300)).precision == 0.0
    with pytest.raises(ValueError):
        metrics(np.ones(5, bool), np.ones(5, bool), np.ones(5))


def test_report_json_round_trip(rng):
    y = rng.random(50) < 0.3
    rep = EvalReport([metrics(y, y, y.astype(float), "a")], int(y.sum()), 50, 7, {"k": 1}, {"e": [1.0]})
    back = EvalReport.from_json(rep.to_json())
    assert back == rep
    assert "100.0000" in rep.to_csv(percent=True)


# persistence

def test_iforest_round_trip_bit_exact(rng):
    X = rng.normal(size=(1000, 4))
    m = iforest.fit(X, seed=1).model
    back, meta = persist.loads(persist.dumps(m, {"seed": 1}))
    assert np.array_equal(back.score(X), m.score(X)) and meta == {"seed": 1}


def test_other_models_round_trip(rng):
    X = rng.normal(size=(400, 4))
    oc = ocsvm.fit(X, ocsvm.OcsvmConfig(nu=0.1, gamma=0.5)).model
    assert np.array_equal(persist.loads(persist.dumps(oc))[0].decision(X), oc.decision(X))
    ae, _ = autoencoder.train(X, autoencoder.TrainConfig(max_epochs=3))
    ae2 = persist.loads(persist.dumps(ae))[0]
    assert np.max(np.abs(ae2.reconstruction_error(X) - ae.reconstruction_error(X))) <= 1e-12
    assert ae2.threshold == ae.threshold
    km = cluster_map.kmeans_fit(X, 3)
    assert np.array_equal(persist.loads(persist.dumps(km))[0].predict(X), km.labels)
    pca, P = cluster_map.pca_project(X)
    assert np.array_equal(persist.loads(persist.dumps(pca))[0].transform(X), P)
    std = build_matrix(X).params
    assert np.array_equal(persist.loads(persist.dumps(std))[0].transform(X), std.transform(X))
    w = arf.ArfWeights((0.1, 0.2, 0.3, 0.4, 0.5), 7, "Rural-X")
    assert persist.loads(persist.dumps(w))[0] == w


def test_tampered_artifact_rejected(rng, tmp_path):
    m = iforest.fit(rng.normal(size=(300, 4)), n_trees=5).model
    path = persist.save_model(tmp_path / "m.json", m)
    env = json.loads(path.read_text())
    env["payload"]["model"]["score_threshold"] += 1e-9
    path.write_text(json.dumps(env))
    with pytest.raises(persist.ChecksumError):
        persist.load_model(path)


def test_future_version_rejected(rng):
    env = json.loads(persist.dumps(arf.ArfWeights((0.2,) * 5)))
    env["schema_version"] = persist.SCHEMA_VERSION + 1
    with pytest.raises(persist.UnsupportedVersionError):
        persist.loads(json.dumps(env))


def test_unknown_model_type():
    with pytest.raises(TypeError):
        persist.dumps(object())


# config

def test_ini_round_trip():
    cfg = PipelineConfig()
    cfg.sweep.contamination = [0.005, 0.01, 0.02]
    cfg.ocsvm.gamma = 0.5
    assert parse_ini(cfg.to_ini()) == cfg


@pytest.mark.parametrize("text", ["[nope]\nx = 1\n", "[ocsvm]\nbogus = 1\n", "[ocsvm]\nnu = abc\n"])
def test_ini_rejects_bad_input(text):
    with pytest.raises(ValueError):
        parse_ini(text)


def test_out_dir_precedence(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[run]\nout_dir = from_file\nseed = 5\n")
    assert load_config(ini, environ={}).run.out_dir == "from_file"
    assert load_config(ini, environ={"FRAUDLAB_OUT": "env"}).run.out_dir == "env"
    cfg = load_config(ini, out_dir="flag", seed=9, environ={"FRAUDLAB_OUT": "env"})
    assert (cfg.run.out_dir, cfg.run.seed) == ("flag", 9)


# reports

def test_histogram_matches_counting_pass(rng):
    values = rng.integers(0, 100, 5000).astype(float)
    edges, counts = report.histogram_counts(values, 10, (0.0, 100.0))
    manual = [0] * 10
    for v in values:
        manual[min(int(v // 10), 9)] += 1
    assert counts.tolist() == manual and edges.tolist() == list(np.arange(0, 101, 10.0))


def test_scatter_with_no_highlight_parses(rng):
    svg = report.scatter_chart(rng.normal(size=(200, 2)), np.zeros(200, bool), "PCA")
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert "highlighted: 0" in svg


def test_charts_escape_text():
    ET.fromstring(report.bar_chart(["a<b", "c&d"], [1, 2], "x > y"))
    ET.fromstring(report.heat_table(np.array([[1.0, np.nan], [np.nan, 1.0]]), ["p", "q"], "corr"))


# pipeline

def small_config(out, **sweep):
    cfg = PipelineConfig()
    cfg.run.out_dir = str(out)
    cfg.gen.n_transactions, cfg.gen.n_cards, cfg.gen.n_merchants = 6000, 100, 40
    cfg.sweep.contamination = sweep.get("contamination", [])
    return cfg


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    # same out_dir both times since the config, path included, is embedded in every artifact
    root = tmp_path_factory.mktemp("runs")
    sweep = [0.005, 0.01, 0.02]
    first = run_pipeline(small_config(root / "run", contamination=sweep))
    (root / "run").rename(root / "first")
    first.out_dir = root / "first"
    return first, run_pipeline(small_config(root / "run", contamination=sweep))


def test_pipeline_is_deterministic(two_runs):
    a, b = two_runs
    assert (a.out_dir / "eval_report.json").read_bytes() == (b.out_dir / "eval_report.json").read_bytes()
    for name in ("iforest", "ocsvm", "autoencoder", "standardization"):
        assert (a.out_dir / "models" / f"{name}.json").read_bytes() == (b.out_dir / "models" / f"{name}.json").read_bytes()


def test_contamination_sweep_rows(two_runs):
    rep = two_runs[0].report
    sweep = [r for r in rep.rows if r.name.startswith("iforest@")]
    assert [r.name for r in sweep] == ["iforest@contamination=0.005", "iforest@contamination=0.01",
                                       "iforest@contamination=0.02"]
    assert sweep[0].tp + sweep[0].fp < sweep[2].tp + sweep[2].fp


def test_every_row_reconciles(two_runs):
    rep = two_runs[0].report
    for r in rep.rows:
        assert r.n == rep.n and r.tp + r.fn == rep.positives
        assert all(0.0 <= v <= 1.0 for v in (r.detection_rate, r.false_positive_rate, r.precision, r.auc_roc))


def test_artifacts_reload(two_runs):
    res = two_runs[0]
    for path in (res.out_dir / "models").glob("*.json"):
        persist.load_model(path)
    for path in (res.out_dir / "report").glob("*.svg"):
        ET.parse(path)
    manifest = json.loads((res.out_dir / "manifest.json").read_text())
    assert manifest["seed"] == 42 and "eval_report.json" in manifest["files"]
    assert parse_ini((res.out_dir / "config.ini").read_text()) == res.pipeline.config
    audit = (res.out_dir / "arf_audit.jsonl").read_text().splitlines()
    assert audit and all("w_ae" in json.loads(line) for line in audit)


def test_missing_input_names_ingest(tmp_path):
    cfg = small_config(tmp_path / "out")
    cfg.run.input_dir = str(tmp_path / "empty")
    (tmp_path / "empty").mkdir()
    with pytest.raises(StageError) as exc:
        run_pipeline(cfg)
    assert exc.value.stage == "ingest"
    assert "stage 'ingest' failed" in str(exc.value)


def test_unlabeled_corpus_still_runs(tmp_path, two_runs):
    src = two_runs[0].out_dir / "corpus"
    d = tmp_path / "nolabels"
    d.mkdir()
    for name in ("transactions", "cardholders", "merchants", "categories"):
        (d / f"{name}.csv").write_bytes((src / f"{name}.csv").read_bytes())
    cfg = small_config(tmp_path / "out")
    cfg.run.input_dir = str(d)
    rep = Pipeline(cfg).evaluate()
    assert rep.rows == [] and rep.extra["labels"] == "absent"


# CLI

def test_cli_missing_input(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text(f"[run]\ninput_dir = {tmp_path / 'none'}\n")
    assert main(["--config", str(ini), "--out", str(tmp_path / "o"), "ingest"]) == 2
    assert "stage 'ingest' failed" in capsys.readouterr().err


def test_cli_score_uses_saved_models(two_runs, tmp_path, capsys):
    res = two_runs[0]
    ini = tmp_path / "c.ini"
    ini.write_text(f"[run]\ninput_dir = {res.out_dir / 'corpus'}\n")
    out = tmp_path / "scores.csv"
    assert main(["--config", str(ini), "--out", str(tmp_path / "o"), "score",
                 "--models", str(res.out_dir / "models"), "--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == res.report.n + 1
    flagged = sum(int(line.split(",")[2]) for line in lines[1:])
    assert flagged == int(round(0.01 * res.report.n))


def test_arf_stream_json_lines():
    recs = [{"txn_id": f"T{i}", "card_id": "C1", "timestamp": 1_700_000_000_000 + i * 30_000,
             "amount": 20.0 + i % 3 if i < 9 else 900.0, "f_ae": int(i == 9)} for i in range(10)]
    recs.append({"txn_id": "T10", "card_id": "C2", "timestamp": "2024-01-01T00:00:00Z", "amount": 5, "region": "Rural-X"})
    out = io.StringIO()
    n = stream_scores([json.dumps(r) for r in recs], PipelineConfig(), out)
    rows = [json.loads(line) for line in out.getvalue().splitlines()]
    assert n == len(rows) == 11
    assert set(rows[0]) == {"txn_id", "R", "high_risk", "contributions", "weights"}
    assert rows[9]["high_risk"]  # > 3 sigma jump 30 s after the previous use
    assert rows[10]["weights"]["w_spend"] > rows[0]["weights"]["w_spend"]
    with pytest.raises(ValueError, match="line 1"):
        stream_scores(['{"card_id": "C1"}'], PipelineConfig(), io.StringIO())
