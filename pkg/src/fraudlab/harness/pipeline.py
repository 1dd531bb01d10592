"""End-to-end run: gen -> ingest -> features -> train -> cluster -> risk -> arf -> eval -> report.

Stages are cached on a ``Pipeline`` object so CLI subcommands can stop early.
Every file lands under ``config.run.out_dir``; a manifest records the config,
seed and a sha256 per artifact.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import arf, autoencoder, cluster_map, features, ingest, iforest, ocsvm, risk_engine, synthgen
from ..quantile import top_fraction_mask
from . import report as report_mod
from .config import PipelineConfig
from .metrics import EvalReport, metrics
from .persist import save_model

log = logging.getLogger(__name__)

THRESHOLD_TYPOLOGIES = ("high_amount_burst", "rapid_use_run", "spree")
FIRST_USE_GAP = 1e12  # seconds; far beyond the recency horizon


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``cause`` holds the original error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextlib.contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class TrainResult:
    iforest: iforest.IsolationForestFit
    ocsvm: ocsvm.OcsvmFit
    autoencoder: autoencoder.AutoencoderModel
    history: autoencoder.TrainHistory
    if_scores: np.ndarray
    if_flags: np.ndarray
    oc_decision: np.ndarray
    oc_flags: np.ndarray
    ae_errors: np.ndarray
    ae_flags: np.ndarray


@dataclass
class ClusterResult:
    kmeans: cluster_map.KMeansModel
    silhouette: float
    elbow: dict
    dbscan: cluster_map.DbscanResult
    k_distances: np.ndarray
    pca: cluster_map.PcaModel
    projection: np.ndarray


@dataclass
class ArfResult:
    risk: np.ndarray
    high_risk: np.ndarray
    weights: dict  # group -> ArfWeights


@dataclass
class Pipeline:
    config: PipelineConfig = field(default_factory=PipelineConfig)
    _cache: dict = field(default_factory=dict, repr=False)
    files: list = field(default_factory=list)

    @property
    def out(self) -> Path:
        return Path(self.config.run.out_dir)

    @property
    def seed(self) -> int:
        return self.config.run.seed

    def _once(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def _written(self, path) -> Path:
        path = Path(path)
        self.files.append(path)
        return path

    def _meta(self, **extra) -> dict:
        return {"seed": self.seed, "config": self.config.to_dict(), **extra}

    # ------------------------------------------------------------------ stages

    def corpus_dir(self) -> Path:
        def run():
            if self.config.run.input_dir:
                return Path(self.config.run.input_dir)
            with stage("gen"):
                g = self.config.gen
                cfg = synthgen.GenConfig(n_transactions=g.n_transactions, n_cards=g.n_cards,
                                         n_merchants=g.n_merchants, anomaly_rate=g.anomaly_rate, seed=self.seed)
                d = synthgen.write_corpus(synthgen.generate_corpus(cfg), self.out / "corpus")
                for name in ("transactions", "cardholders", "merchants", "categories", "labels"):
                    self._written(d / f"{name}.csv")
                return d
        return self._once("gen", run)

    def labels(self) -> dict | None:
        def run():
            path = self.corpus_dir() / "labels.csv"
            return synthgen.read_labels(path) if path.exists() else None
        return self._once("labels", run)

    def ingest(self):
        def run():
            d = self.corpus_dir()
            with stage("ingest"):
                c = self.config.ingest
                rows, rep = ingest.ingest_dir(d, c.cap_quantile, cap=c.cap)
                self.out.mkdir(parents=True, exist_ok=True)
                p = self._written(self.out / "ingest_report.json")
                p.write_text(rep.to_json() + "\n", encoding="utf-8")
                return rows, rep
        return self._once("ingest", run)

    def features(self):
        def run():
            rows, _ = self.ingest()
            with stage("features"):
                table = features.build_features(rows)
                matrix = features.build_matrix(table)
                features.write_feature_csv(self._written(self.out / "features.csv"), table, matrix)
                save_model(self._written(self.out / "models" / "standardization.json"), matrix.params, self._meta())
                return table, matrix
        return self._once("features", run)

    def train(self) -> TrainResult:
        def run():
            _, matrix = self.features()
            X = matrix.values
            with stage("train"):
                c = self.config
                f_if = iforest.fit(X, c.iforest.n_trees, c.iforest.contamination, c.iforest.subsample, self.seed)
                f_oc = ocsvm.fit(X, ocsvm.OcsvmConfig(nu=c.ocsvm.nu, gamma=c.ocsvm.gamma, tol=c.ocsvm.tol,
                                                      max_passes=c.ocsvm.max_passes,
                                                      subsample_cap=c.ocsvm.subsample_cap, seed=self.seed))
                a = c.autoencoder
                ae, hist = autoencoder.train(matrix, autoencoder.TrainConfig(
                    max_epochs=a.max_epochs, batch_size=a.batch_size, learning_rate=a.learning_rate,
                    validation_fraction=a.validation_fraction, patience=a.patience, lr_patience=a.lr_patience,
                    min_lr=a.min_lr, activation=a.activation, threshold_quantile=a.threshold_quantile,
                    seed=self.seed))
                dec = f_oc.model.decision(X)
                err = ae.reconstruction_error(X)
                models = self.out / "models"
                save_model(self._written(models / "iforest.json"), f_if.model, self._meta())
                save_model(self._written(models / "ocsvm.json"), f_oc.model,
                           self._meta(iterations=f_oc.iterations))
                save_model(self._written(models / "autoencoder.json"), ae,
                           self._meta(stopped_epoch=hist.stopped_epoch, best_epoch=hist.best_epoch))
                hist.to_csv(self._written(self.out / "autoencoder_history.csv"))
                return TrainResult(f_if, f_oc, ae, hist, f_if.train_scores, f_if.train_flags,
                                   dec, f_oc.model.flag(dec), err, ae.flag(err))
        return self._once("train", run)

    def cluster(self) -> ClusterResult:
        def run():
            _, matrix = self.features()
            X = matrix.values
            with stage("cluster"):
                c = self.config.cluster
                km = cluster_map.kmeans_fit(X, c.k, c.n_init, c.max_iter, self.seed)
                sil = cluster_map.silhouette(X, km.labels, c.silhouette_sample, self.seed)
                elbow = cluster_map.elbow_curve(X, range(1, c.elbow_max_k + 1), c.n_init, c.max_iter, self.seed)
                db = cluster_map.dbscan(X, c.eps, c.min_samples)
                kd = cluster_map.k_distance(X, c.min_samples)
                pca, proj = cluster_map.pca_project(X, 2)
                save_model(self._written(self.out / "models" / "kmeans.json"), km, self._meta())
                save_model(self._written(self.out / "models" / "pca.json"), pca, self._meta())
                summary = {
                    "kmeans_k": c.k, "kmeans_inertia": km.inertia, "silhouette": sil,
                    "cluster_sizes": np.bincount(km.labels, minlength=c.k).tolist(),
                    "elbow": {str(k): v for k, v in elbow.items()},
                    "dbscan_clusters": db.n_clusters, "dbscan_noise_fraction": db.noise_fraction,
                    "pca_explained_variance_ratio": pca.explained_variance_ratio.tolist(),
                }
                p = self._written(self.out / "cluster_summary.json")
                p.write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8")
                return ClusterResult(km, sil, elbow, db, kd, pca, proj)
        return self._once("cluster", run)

    def risk(self) -> risk_engine.RiskResult:
        def run():
            table, _ = self.features()
            t = self.train()
            with stage("risk"):
                r = self.config.risk
                res = risk_engine.score_corpus(table, t.if_flags, t.oc_flags, t.ae_flags, r.weights(), r.high_risk_on)
                risk_engine.write_risk_csv(self._written(self.out / "risk.csv"), table, res)
                return res
        return self._once("risk", run)

    def arf(self) -> ArfResult:
        def run():
            table, _ = self.features()
            t = self.train()
            with stage("arf"):
                return self._stream_arf(table, t)
        return self._once("arf", run)

    def _stream_arf(self, table, t: TrainResult) -> ArfResult:
        a = self.config.arf
        cfg = arf.ArfConfig(learning_rate=a.learning_rate, margin=a.margin, tau_quantile=a.tau_quantile,
                            tau_window=a.tau_window, warmup=a.warmup, batch_size=a.batch_size, w_max=a.w_max)
        contexts = {g: arf.ArfContext(g, p, a.volatility, a.legal_weight) for g, p in a.region_priors.items()}
        audit_path = self._written(self.out / "arf_audit.jsonl")
        n = len(table)
        R = np.zeros(n)
        high = np.zeros(n, dtype=bool)
        order = sorted(range(n), key=lambda i: (int(table.timestamp_ms[i]), table.txn_id[i]))
        stats: dict = {}
        last: dict = {}
        with open(audit_path, "w", encoding="utf-8") as audit:
            engine = arf.ArfEngine(contexts, cfg, audit)
            for i in order:
                card = table.card_id[i]
                ts = int(table.timestamp_ms[i])
                amount = float(table.amount[i])
                st = stats.setdefault(card, arf.WelfordStats())
                gap = (ts - last[card]) / 1000.0 if card in last else FIRST_USE_GAP
                feats = arf.ArfFeatures(
                    f_if=float(t.if_flags[i]), f_ocsvm=float(t.oc_flags[i]), f_ae=float(t.ae_flags[i]),
                    spend_delta=arf.spend_delta(amount, st.mean, st.std, cfg.spend_cap),
                    time_delta=arf.time_delta(gap, cfg.time_horizon))
                group = table.region[i] if table.region[i] in contexts else "global"
                res = engine.process(table.txn_id[i], feats, gap, group, stamp=ingest.format_timestamp_ms(ts))
                R[i], high[i] = res.risk, res.high_risk
                st.add(amount)
                last[card] = ts
            engine.flush(stamp="end")
        for g, w in sorted(engine.weights.items()):
            save_model(self._written(self.out / "models" / f"arf_weights_{g}.json"), w, self._meta())
        return ArfResult(R, high, dict(engine.weights))

    def evaluate(self) -> EvalReport:
        def run():
            table, matrix = self.features()
            t = self.train()
            clus = self.cluster()
            r = self.risk()
            a = self.arf()
            labels = self.labels()
            with stage("eval"):
                rep = self._evaluate(table, matrix, t, clus, r, a, labels)
                self._written(self.out / "eval_report.json").write_text(rep.to_json() + "\n", encoding="utf-8")
                self._written(self.out / "eval_report.csv").write_text(rep.to_csv(), encoding="utf-8")
                self._written(self.out / "eval_table.csv").write_text(rep.to_csv(percent=True), encoding="utf-8")
                return rep
        return self._once("eval", run)

    def _evaluate(self, table, matrix, t, clus, r, a, labels) -> EvalReport:
        n = len(table)
        extra = {
            "flag_rates": {"iforest": float(t.if_flags.mean()), "ocsvm": float(t.oc_flags.mean()),
                           "autoencoder": float(t.ae_flags.mean())},
            "queue_fraction": r.queue_fraction,
            "high_amount_cut": r.high_amount_cut,
            "silhouette": clus.silhouette,
            "dbscan_noise_fraction": clus.dbscan.noise_fraction,
            "dbscan_clusters": clus.dbscan.n_clusters,
            "ocsvm_support_vectors": int(t.ocsvm.model.alphas.size),
            "arf_weights": {g: list(w.w) for g, w in sorted(a.weights.items())},
        }
        rep = EvalReport([], 0, n, self.seed, self.config.to_dict(), extra)
        if labels is None:
            extra["labels"] = "absent"
            return rep
        missing = [tid for tid in table.txn_id if tid not in labels]
        if missing:
            raise ValueError(f"{len(missing)} transactions have no label (first: {missing[0]})")
        y = np.array([labels[tid][0] for tid in table.txn_id], dtype=bool)
        typ = np.array([labels[tid][1] for tid in table.txn_id])
        rep.positives = int(y.sum())
        rows = [
            metrics(y, t.if_flags, t.if_scores, "iforest"),
            metrics(y, t.oc_flags, -t.oc_decision, "ocsvm"),
            metrics(y, t.ae_flags, t.ae_errors, "autoencoder"),
            metrics(y, r.high_risk, r.composite, "composite"),
            metrics(y, r.review, r.weighted, "combined"),
            metrics(y, a.high_risk, a.risk, "arf"),
        ]
        for c in self.config.sweep.contamination:
            rows.append(metrics(y, top_fraction_mask(t.if_scores, c), t.if_scores, f"iforest@contamination={c!r}"))
        for g in self.config.sweep.gamma:
            oc = self.config.ocsvm
            fit = ocsvm.fit(matrix.values, ocsvm.OcsvmConfig(nu=oc.nu, gamma=g, tol=oc.tol, max_passes=oc.max_passes,
                                                             subsample_cap=oc.subsample_cap, seed=self.seed))
            dec = fit.model.decision(matrix.values)
            rows.append(metrics(y, fit.model.flag(dec), -dec, f"ocsvm@gamma={g!r}"))
        rep.rows = rows

        thr = np.isin(typ, THRESHOLD_TYPOLOGIES)
        extra["threshold_typologies"] = {
            "detection_rate": float(r.review[thr].mean()) if thr.any() else float("nan"),
            "false_positive_rate": float(r.review[~y].mean()),
        }
        extra["typology_detection"] = {k: float(r.review[typ == k].mean())
                                       for k in sorted(set(typ.tolist()) - {synthgen.NONE})}
        in_cluster = np.bincount(clus.kmeans.labels[y], minlength=clus.kmeans.k)
        extra["planted_share_by_cluster"] = (in_cluster / max(int(y.sum()), 1)).tolist()
        rep.check()
        return rep

    def render(self) -> list:
        def run():
            table, _ = self.features()
            t = self.train()
            clus = self.cluster()
            r = self.risk()
            with stage("report"):
                corr = risk_engine.indicator_correlations(r.flags.matrix(list(risk_engine.COMPOSITE_FLAGS)))
                inp = report_mod.ReportInputs(
                    amount=table.amount, category_label=table.category_label, hour=table.hour,
                    day_of_week=table.day_of_week, month=table.month,
                    detector_scores={"iforest": (t.if_scores, t.if_flags), "ocsvm": (-t.oc_decision, t.oc_flags),
                                     "autoencoder": (t.ae_errors, t.ae_flags)},
                    pca_points=clus.projection,
                    pca_highlight={"iforest": t.if_flags, "ocsvm": t.oc_flags, "autoencoder": t.ae_flags},
                    elbow=clus.elbow, k_distances=clus.k_distances,
                    entity_top={"cards": risk_engine.entity_fraud_ratio(table.card_id, r.composite, 10),
                                "merchants": risk_engine.entity_fraud_ratio(table.merchant_id, r.composite, 10)},
                    window_risk=risk_engine.time_window_risk(table.hour, r.weighted),
                    correlation=corr, correlation_labels=list(risk_engine.COMPOSITE_FLAGS),
                    loss_history=t.history)
                return [self._written(p) for p in report_mod.render_reports(inp, self.out / "report")]
        return self._once("report", run)

    def write_manifest(self) -> Path:
        root = self.out
        entries = {}
        for p in sorted(set(self.files)):
            if p.exists():
                entries[p.relative_to(root).as_posix() if p.is_relative_to(root) else str(p)] = \
                    hashlib.sha256(p.read_bytes()).hexdigest()
        path = root / "manifest.json"
        path.write_text(json.dumps({"seed": self.seed, "config": self.config.to_dict(), "files": entries},
                                   sort_keys=True, indent=1) + "\n", encoding="utf-8")
        (root / "config.ini").write_text(self.config.to_ini(), encoding="utf-8")
        return path


@dataclass
class PipelineResult:
    out_dir: Path
    report: EvalReport
    files: list
    pipeline: Pipeline


def run_pipeline(config: PipelineConfig | None = None) -> PipelineResult:
    """Run every stage; a failure raises StageError naming the stage."""
    p = Pipeline(config or PipelineConfig())
    p.out.mkdir(parents=True, exist_ok=True)
    rep = p.evaluate()
    p.render()
    p.write_manifest()
    return PipelineResult(p.out, rep, sorted(set(p.files)), p)
