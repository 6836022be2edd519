"""Command-line entry point: ``python -m faconvlstm <command> ...``.

Failures print one JSON object ``{"error": <name>, "code": <int>, "message": ...}``
on stderr and exit with that code.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import t4d
from .cost import BENCH_COLUMNS, analytic_complexity_check, default_sweep, sweep
from .data import generate_synthetic_sequence
from .harness import (
    ARCHS,
    build_model,
    compare,
    embed,
    evaluate,
    load_checkpoint,
    load_config,
    save_checkpoint,
    summarize,
)
from .tensor import ConfigError, DimensionError
from .train import TrainingDiverged, init_decoder, train

EXIT_USAGE = 2  # argparse's own code
ERROR_CODES = {
    "config": 3,
    "io": 4,
    "diverged": 5,
    "check_failed": 6,
    "dimension": 7,
}


class CheckFailed(Exception):
    pass


def _fail(kind: str, message: str, **extra) -> int:
    code = ERROR_CODES[kind]
    print(json.dumps({"error": kind, "code": code, "message": message, **extra}), file=sys.stderr)
    return code


def _rows_csv(columns, rows, out) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([r[c] for c in columns])


def cmd_gradcheck(args) -> int:
    from .gradsuite import TOLERANCE, run_suite

    results = run_suite(args.seed, args.instances)
    for r in results:
        flag = "ok" if r.ok else "FAIL"
        print(f"{r.name:20s} instances={r.instances:3d} max_rel_err={r.max_error:.3e} {r.seconds:6.2f}s {flag}")
    bad = [r.name for r in results if not r.ok]
    if bad:
        raise CheckFailed(f"gradient check above {TOLERANCE} for: {', '.join(bad)}")
    return 0


def cmd_bench(args) -> int:
    if args.sweep != "default":
        raise ConfigError(f"unknown sweep {args.sweep!r} (only 'default')")
    rows = [asdict(r) for r in sweep(default_sweep(), args.H, args.W, args.T)]
    for r in rows:
        if r["macs"] != r["closed_form_macs"]:
            raise CheckFailed(f"instrumented MACs {r['macs']} != closed form {r['closed_form_macs']} ({r['arch']})")
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        _rows_csv(BENCH_COLUMNS, rows, out)
    finally:
        if args.out:
            out.close()
    check = analytic_complexity_check(default_sweep(), args.H, args.W, args.T)
    if not check["ok"]:
        raise CheckFailed("FA recurrent MACs not below baseline for some C_b <= F/2 row")
    return 0


def cmd_gen(args) -> int:
    cfg = load_config(args.spec)
    spec = cfg.data if args.seed is None else replace(cfg.data, seed=args.seed)
    x, labels = generate_synthetic_sequence(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t4d.save(out / "x.t4d", x)
    with open(out / "labels.csv", "w", newline="") as f:
        _rows_csv(["t", "regime"], [{"t": t, "regime": int(r)} for t, r in enumerate(labels)], f)
    (out / "data.json").write_text(json.dumps(spec.to_dict(), sort_keys=True, indent=1) + "\n")
    print(json.dumps({"x": str(out / "x.t4d"), "shape": list(x.shape), "labels": str(out / "labels.csv")}))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.spec)
    x, _ = generate_synthetic_sequence(replace(cfg.data, seed=args.seed))
    model = build_model(cfg, args.arch, args.seed)
    decoder = init_decoder(model.hidden_channels, x.shape[-1], np.random.default_rng(args.seed), model.embedding_dim)
    result = train(model, x, replace(cfg.train, seed=args.seed), decoder=decoder)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / f"{args.arch}_seed{args.seed}.fackpt"
    save_checkpoint(ckpt, model, result.decoder, cfg, args.seed)
    (out / f"{args.arch}_seed{args.seed}_loss.csv").write_text(result.log_csv())
    first, last = result.log[0]["task"], result.log[-1]["task"]
    print(json.dumps({"checkpoint": str(ckpt), "task_first": first, "task_last": last}))
    return 0


def cmd_cluster(args) -> int:
    model, decoder, cfg, meta = load_checkpoint(args.checkpoint)
    if args.arch and args.arch != meta["arch"]:
        raise ConfigError(f"checkpoint holds {meta['arch']!r}, not {args.arch!r}")
    if args.spec:
        cfg = replace(cfg, data=load_config(args.spec).data)
    seed = meta.get("seed", 0) if args.seed is None else args.seed
    x, labels = generate_synthetic_sequence(replace(cfg.data, seed=seed))
    k = args.k or cfg.k
    if not 2 <= k <= len(x):
        raise ConfigError(f"k={k} must lie in [2, T={len(x)}]")
    row = evaluate(cfg, embed(model, decoder, x, cfg.cluster_on), x, labels, k, seed, model.arch, "trained")
    print(json.dumps(row, sort_keys=True))
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.spec)
    archs = tuple(args.archs.split(",")) if args.archs else ARCHS
    rows = compare(cfg, args.out, args.k, args.seeds, archs)
    for r in summarize(rows):
        print(json.dumps(r, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="faconvlstm", description="Factorized-attention ConvLSTM kit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="parameter / MAC sweep as CSV")
    p.add_argument("--sweep", default="default")
    p.add_argument("--H", type=int, default=8)
    p.add_argument("--W", type=int, default=8)
    p.add_argument("--T", type=int, default=4)
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen", help="write a synthetic sequence (T4D) and its regime labels")
    p.add_argument("--spec", default="default")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="fit one model; write checkpoint and loss CSV")
    p.add_argument("--spec", default="default")
    p.add_argument("--arch", choices=ARCHS, default="faconvlstm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cluster", help="embed, run k-means, print the metric report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--spec", help="override the data section stored in the checkpoint")
    p.add_argument("--arch", choices=ARCHS)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("compare", help="FA vs ConvLSTM2D end to end; metric and curve CSVs")
    p.add_argument("--spec", default="default")
    p.add_argument("--k", type=int)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--archs", help="comma-separated subset of " + ",".join(ARCHS))
    p.add_argument("--out", default="results")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)  # exits 2 with usage on bad flags
    try:
        return args.func(args)
    except ConfigError as e:
        return _fail("config", str(e))
    except DimensionError as e:
        return _fail("dimension", str(e))
    except TrainingDiverged as e:
        return _fail("diverged", str(e), step=e.step)
    except CheckFailed as e:
        return _fail("check_failed", str(e))
    except (OSError, ValueError) as e:
        return _fail("io", f"{type(e).__name__}: {e}")


if __name__ == "__main__":
    sys.exit(main())
