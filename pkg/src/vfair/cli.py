"""Command-line entry points.

Subcommands:
  train    run every (method, seed) pair of a JSON config; write run
           records, step traces, and an aggregate table to --out
  rank     average metric ranks of saved runs over random partitions
  curve    sorted per-example loss curve of one saved run
  compare  aggregate table across saved runs
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .harness import (
    RunRecord,
    aggregate,
    build_datasets,
    build_model_spec,
    config_from_dict,
    emit_loss_curve,
    load_config,
    run_experiment,
    write_trace,
)
from .metrics import random_partition_rank


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vfair",
        description="Train and compare variance-suppressing fair learners.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run all (method, seed) pairs of a config")
    p_train.add_argument("--config", required=True, help="path to a JSON experiment config")
    p_train.add_argument("--out", required=True, help="output directory")

    p_rank = sub.add_parser("rank", help="average ranks over random partitions")
    p_rank.add_argument("--runs", required=True, nargs="+", help="run record JSON files")
    p_rank.add_argument("--k", type=int, default=10, help="groups per random partition")
    p_rank.add_argument("--trials", type=int, default=100, help="number of random partitions")
    p_rank.add_argument("--seed", type=int, default=0)
    p_rank.add_argument("--out", default=None, help="optional CSV output path")

    p_curve = sub.add_parser("curve", help="sorted per-example loss curve of one run")
    p_curve.add_argument("--run", required=True, help="run record JSON file")
    p_curve.add_argument("--split", choices=("train", "test"), default="test")
    p_curve.add_argument("--out", required=True, help="CSV output path")

    p_cmp = sub.add_parser("compare", help="aggregate metrics across saved runs")
    p_cmp.add_argument("--runs", required=True, nargs="+", help="run record JSON files")
    p_cmp.add_argument("--out", default=None, help="optional CSV output path")

    return parser


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    records = run_experiment(cfg)
    for rec in records:
        stem = f"{rec.method}_seed{rec.seed}"
        rec.save(out / "runs" / f"{stem}.json")
        if rec.trace:
            write_trace(rec.trace, out / "traces" / f"{stem}.csv")
        overall = rec.metrics["overall"]
        print(
            f"{rec.method} seed={rec.seed} epoch={rec.selected_epoch} "
            f"{rec.utility_kind}={overall.utility:.6g} var={overall.var:.6g}"
        )
    table = aggregate(records)
    table.to_csv(out / "aggregate.csv")
    print(f"wrote {len(records)} runs to {out}")
    return 0


def _load_runs(paths) -> list:
    return [RunRecord.load(p) for p in paths]


def _cmd_rank(args) -> int:
    records = _load_runs(args.runs)
    targets = records[0].test_targets
    kind = records[0].utility_kind
    per_method = {}
    for rec in records:
        if rec.test_targets.shape != targets.shape or not np.array_equal(
            rec.test_targets, targets
        ):
            raise DataError("rank needs runs evaluated on the identical test split")
        if rec.utility_kind != kind:
            raise DataError("rank needs runs sharing one utility kind")
        name = f"{rec.method}_seed{rec.seed}"
        if name in per_method:
            raise DataError(f"duplicate run {name}")
        per_method[name] = rec.test_predictions
    table = random_partition_rank(
        per_method, targets, k=args.k, trials=args.trials, seed=args.seed, kind=kind
    )
    if args.out:
        table.to_csv(args.out)
    header = ["method", "utility", "wu", "mud", "tud"]
    print(",".join(header))
    for i, m in enumerate(table.methods):
        print(m + "," + ",".join(f"{v:.4f}" for v in table.avg_rank[i]))
    return 0


def _cmd_curve(args) -> int:
    rec = RunRecord.load(args.run)
    if not rec.config:
        raise DataError("run record has no embedded config; cannot rebuild the dataset")
    cfg = config_from_dict(rec.config)
    train, test = build_datasets(cfg)
    dataset = train if args.split == "train" else test
    spec = build_model_spec(cfg, train)
    losses = emit_loss_curve(spec, rec.params, dataset, path=args.out)
    print(
        f"{args.split} losses: n={len(losses)} mean={losses.mean():.6g} "
        f"max={losses.max():.6g} -> {args.out}"
    )
    return 0


def _cmd_compare(args) -> int:
    records = _load_runs(args.runs)
    table = aggregate(records)
    if args.out:
        table.to_csv(args.out)
    for row in table.rows:
        util = row["utility_mean"]
        var = row["var_mean"]
        mud = row["mud_mean"]
        print(
            f"{row['partition']}/{row['method']}: n={row['n_runs']} "
            f"utility={util:.6g} mud={mud:.6g} var={var:.6g}"
        )
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handler = {
        "train": _cmd_train,
        "rank": _cmd_rank,
        "curve": _cmd_curve,
        "compare": _cmd_compare,
    }[args.command]
    try:
        return handler(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
