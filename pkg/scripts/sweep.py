"""Sweep isolation-forest contamination and OCSVM gamma on one synthetic corpus.

    python scripts/sweep.py --n 50000 --contamination 0.005,0.01,0.02 --gamma 0.05,0.1,0.5
"""
import argparse
import tempfile

from fraudlab.harness.config import PipelineConfig
from fraudlab.harness.pipeline import Pipeline


def floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=50_000, help="corpus size")
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--contamination", type=floats, default=[0.005, 0.01, 0.02, 0.05])
    ap.add_argument("--gamma", type=floats, default=[0.02, 0.05, 0.1, 0.2, 0.5])
    ap.add_argument("--out", help="output directory (default: a temporary one)")
    args = ap.parse_args()

    cfg = PipelineConfig()
    cfg.run.seed = args.seed
    cfg.run.out_dir = args.out or tempfile.mkdtemp(prefix="fraudlab-sweep-")
    cfg.gen.n_transactions = args.n
    cfg.sweep.contamination = args.contamination
    cfg.sweep.gamma = args.gamma
    rep = Pipeline(cfg).evaluate()

    print(f"n={rep.n} positives={rep.positives} seed={rep.seed} out={cfg.run.out_dir}")
    print(f"{'row':32s} {'flagged':>8s} {'det':>7s} {'fpr':>7s} {'prec':>7s} {'auc':>7s}")
    for r in rep.rows:
        if "@" in r.name or r.name in ("iforest", "ocsvm"):
            print(f"{r.name:32s} {r.tp + r.fp:8d} {r.detection_rate:7.4f} {r.false_positive_rate:7.4f} "
                  f"{r.precision:7.4f} {r.auc_roc:7.4f}")


if __name__ == "__main__":
    main()
