"""Print the parameter/MAC sweep and the analytic cost comparison.

    python3 scripts/bench_sweep.py --H 16 --W 16 --T 8
"""

import argparse

from faconvlstm.cost import analytic_complexity_check, default_sweep, dominant_ratio, sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--H", type=int, default=8)
    ap.add_argument("--W", type=int, default=8)
    ap.add_argument("--T", type=int, default=4)
    args = ap.parse_args()
    r = dominant_ratio(8, 32, 8, 3)
    print(f"dominant-term ratio (C=8, F=32, C_b=8, k=3): {r} = {float(r):.2f}")
    print(f"{'arch':11s} {'C':>2s} {'F':>3s} {'C_b':>3s} {'params':>7s} {'macs':>10s} {'ratio':>6s}")
    for row in sweep(default_sweep(), args.H, args.W, args.T):
        print(f"{row.arch:11s} {row.C:2d} {row.F:3d} {row.C_b:3d} {row.params:7d} {row.macs:10d} {row.ratio_vs_baseline:6.2f}")
    chk = analytic_complexity_check(default_sweep(), args.H, args.W, args.T)
    print("FA cheaper on every row with C_b <= F/2:", chk["ok"])


if __name__ == "__main__":
    main()
