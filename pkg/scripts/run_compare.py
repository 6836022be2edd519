"""Run the FA vs ConvLSTM2D comparison and print seed-mean metrics.

    python3 scripts/run_compare.py --spec default --k 3 --seeds 5 --out results
"""

import argparse
import json

from faconvlstm.harness import compare, load_config, summarize


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--spec", default="default")
    ap.add_argument("--k", type=int)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    rows = compare(load_config(args.spec), args.out, args.k, args.seeds)
    for r in summarize(rows):
        print(json.dumps({c: r[c] for c in ("arch", "stage", "silhouette", "davies_bouldin", "majority_accuracy", "rmse")}))


if __name__ == "__main__":
    main()
