"""ARF weights on the typology-switch stream.

Positives are visible through the isolation-forest flag in the first half and
only through the autoencoder flag in the second. Prints the weight vector at
regular checkpoints and optionally writes the full trajectory as CSV.

    python scripts/arf_switch.py --every 4000 --csv weights.csv
"""
import argparse
import csv

from fraudlab.arf import ArfEngine
from fraudlab.synthgen import typology_switch_stream

NAMES = ("w_if", "w_ocsvm", "w_ae", "w_spend", "w_time")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=64_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--every", type=int, default=4000)
    ap.add_argument("--csv", help="write one row of weights per transaction")
    args = ap.parse_args()

    stream = typology_switch_stream(n=args.n, seed=args.seed)
    engine = ArfEngine()
    trajectory = []
    print(f"{'step':>7s} " + " ".join(f"{n:>8s}" for n in NAMES))
    for i, (f, y) in enumerate(stream):
        engine.process(f"T{i}", f, 3600.0, label=y, stamp=i)
        w = engine.weights["global"].w
        trajectory.append(w)
        if (i + 1) % args.every == 0 or i + 1 == len(stream):
            marker = "  <- switch" if i + 1 == len(stream) // 2 else ""
            print(f"{i + 1:7d} " + " ".join(f"{v:8.4f}" for v in w) + marker)
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(("step",) + NAMES)
            out.writerows((i + 1,) + tuple(w) for i, w in enumerate(trajectory))


if __name__ == "__main__":
    main()
