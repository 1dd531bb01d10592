"""Command-line entry point: ``fraudlab [--config PATH] [--seed N] [--out DIR] <command>``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .. import arf, ingest
from ..features import build_features
from .config import load_config
from .persist import load_model
from .pipeline import FIRST_USE_GAP, Pipeline, StageError, run_pipeline

log = logging.getLogger("fraudlab")


def _print_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=1))


def cmd_gen(p: Pipeline, args) -> int:
    print(p.corpus_dir())
    return 0


def cmd_ingest(p: Pipeline, args) -> int:
    _, rep = p.ingest()
    print(rep.to_json())
    return 0


def cmd_features(p: Pipeline, args) -> int:
    table, _ = p.features()
    print(f"{len(table)} rows -> {p.out / 'features.csv'}")
    return 0


def cmd_train(p: Pipeline, args) -> int:
    t = p.train()
    _print_json({"iforest_flag_rate": float(t.if_flags.mean()), "ocsvm_flag_rate": float(t.oc_flags.mean()),
                 "autoencoder_flag_rate": float(t.ae_flags.mean()),
                 "ocsvm_support_vectors": int(t.ocsvm.model.alphas.size),
                 "autoencoder_epochs": t.history.stopped_epoch})
    return 0


def cmd_score(p: Pipeline, args) -> int:
    """Score the current corpus with previously saved models."""
    models = Path(args.models) if args.models else p.out / "models"
    rows, _ = p.ingest()
    table = build_features(rows)
    params, _ = load_model(models / "standardization.json")
    X = params.transform(table.raw_matrix())
    f_if, _ = load_model(models / "iforest.json")
    f_oc, _ = load_model(models / "ocsvm.json")
    ae, _ = load_model(models / "autoencoder.json")
    s_if, dec, err = f_if.score(X), f_oc.decision(X), ae.reconstruction_error(X)
    out = Path(args.output) if args.output else p.out / "scores.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["txn_id", "iforest_score", "iforest_flag", "ocsvm_decision", "ocsvm_flag",
                    "autoencoder_error", "autoencoder_flag"])
        for i, tid in enumerate(table.txn_id):
            w.writerow([tid, repr(float(s_if[i])), int(f_if.flag(s_if[i])), repr(float(dec[i])),
                        int(f_oc.flag(dec[i])), repr(float(err[i])), int(ae.flag(err[i]))])
    print(out)
    return 0


def cmd_cluster(p: Pipeline, args) -> int:
    c = p.cluster()
    _print_json({"silhouette": c.silhouette, "dbscan_clusters": c.dbscan.n_clusters,
                 "dbscan_noise_fraction": c.dbscan.noise_fraction,
                 "elbow": {str(k): v for k, v in c.elbow.items()}})
    return 0


def cmd_risk(p: Pipeline, args) -> int:
    r = p.risk()
    _print_json({"queue_fraction": r.queue_fraction, "queue_size": int(r.queue.size),
                 "high_risk": int(r.high_risk.sum()), "high_amount_cut": r.high_amount_cut})
    return 0


def cmd_eval(p: Pipeline, args) -> int:
    rep = p.evaluate()
    p.write_manifest()
    sys.stdout.write(rep.to_csv(percent=args.percent))
    return 0


def cmd_report(p: Pipeline, args) -> int:
    for path in p.render():
        print(path)
    p.write_manifest()
    return 0


def cmd_sweep(p: Pipeline, args) -> int:
    if args.contamination:
        p.config.sweep.contamination = [float(x) for x in args.contamination.split(",")]
    if args.gamma:
        p.config.sweep.gamma = [float(x) for x in args.gamma.split(",")]
    rep = p.evaluate()
    p.write_manifest()
    keep = [r for r in rep.rows if "@" in r.name]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["detector", "detection_rate", "false_positive_rate", "precision", "auc_roc"])
    for r in keep:
        w.writerow([r.name, repr(r.detection_rate), repr(r.false_positive_rate), repr(r.precision), repr(r.auc_roc)])
    return 0


def cmd_run(p: Pipeline, args) -> int:
    res = run_pipeline(p.config)
    sys.stdout.write(res.report.to_csv(percent=True))
    return 0


def _timestamp_ms(value) -> int:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return int(value)
    return ingest.parse_timestamp_ms(str(value))


def stream_scores(lines, config, out) -> int:
    """JSON-lines in, JSON-lines out. Input fields: txn_id, card_id, timestamp
    (ISO text or epoch ms), amount, optional f_if/f_ocsvm/f_ae flags, region and
    label (0/1, enables the cross-entropy update)."""
    a = config.arf
    cfg = arf.ArfConfig(learning_rate=a.learning_rate, margin=a.margin, tau_quantile=a.tau_quantile,
                        tau_window=a.tau_window, warmup=a.warmup, batch_size=a.batch_size, w_max=a.w_max)
    contexts = {g: arf.ArfContext(g, pr, a.volatility, a.legal_weight) for g, pr in a.region_priors.items()}
    engine = arf.ArfEngine(contexts, cfg)
    stats: dict = {}
    last: dict = {}
    count = 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            card = str(rec["card_id"])
            ts = _timestamp_ms(rec["timestamp"])
            amount = float(rec["amount"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
        st = stats.setdefault(card, arf.WelfordStats())
        gap = (ts - last[card]) / 1000.0 if card in last else FIRST_USE_GAP
        feats = arf.ArfFeatures(float(bool(rec.get("f_if", 0))), float(bool(rec.get("f_ocsvm", 0))),
                                float(bool(rec.get("f_ae", 0))),
                                arf.spend_delta(amount, st.mean, st.std, cfg.spend_cap),
                                arf.time_delta(gap, cfg.time_horizon))
        group = rec.get("region", "global")
        label = rec.get("label")
        res = engine.process(str(rec.get("txn_id", lineno)), feats, gap, group,
                             None if label is None else int(label), stamp=ts)
        st.add(amount)
        last[card] = ts
        out.write(json.dumps({"txn_id": res.txn_id, "R": res.risk, "high_risk": res.high_risk,
                              "contributions": res.contributions,
                              "weights": dict(zip(arf.WEIGHT_NAMES, engine.weights_for(group).w))},
                             sort_keys=True) + "\n")
        count += 1
    return count


def cmd_arf_stream(p: Pipeline, args) -> int:
    stream_scores(sys.stdin, p.config, sys.stdout)
    return 0


COMMANDS = {
    "gen": (cmd_gen, "write a synthetic corpus with planted labels"),
    "ingest": (cmd_ingest, "load, join and clean the corpus; print the ingest report"),
    "features": (cmd_features, "write the engineered feature table"),
    "train": (cmd_train, "fit the three detectors and save them"),
    "score": (cmd_score, "score the corpus with saved models"),
    "cluster": (cmd_cluster, "k-means, DBSCAN and PCA summaries"),
    "risk": (cmd_risk, "indicator flags, risk scores and the review queue"),
    "arf-stream": (cmd_arf_stream, "score JSON-lines transactions from stdin"),
    "eval": (cmd_eval, "evaluate every detector against planted labels"),
    "report": (cmd_report, "render CSV and SVG reports"),
    "sweep": (cmd_sweep, "contamination and gamma sweeps"),
    "run": (cmd_run, "the full pipeline"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fraudlab", description="Unsupervised card-fraud detection toolkit.")
    ap.add_argument("--config", help="INI config file")
    ap.add_argument("--seed", type=int, help="override run.seed")
    ap.add_argument("--out", help="output directory (overrides FRAUDLAB_OUT and run.out_dir)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        sp = sub.add_parser(name, help=text)
        if name == "score":
            sp.add_argument("--models", help="directory with saved models (default OUT/models)")
            sp.add_argument("--output", help="CSV path (default OUT/scores.csv)")
        elif name == "eval":
            sp.add_argument("--percent", action="store_true", help="render rates as percentages")
        elif name == "sweep":
            sp.add_argument("--contamination", help="comma-separated contamination values")
            sp.add_argument("--gamma", help="comma-separated RBF gamma values")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, seed=args.seed, out_dir=args.out)
        return COMMANDS[args.command][0](Pipeline(config), args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
