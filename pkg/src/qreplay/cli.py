"""Command-line interface.

Subcommands:
  run              train per config, write raw + aggregate CSVs
  aggregate        recompute an aggregate CSV from raw CSVs
  rank-report      summarize effective-rank rows from raw CSVs
  validate-config  schema-check a config file or preset
  synth-data       write a synthetic IDX image corpus

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error.
"""

import argparse
import sys

import numpy as np

from . import config as cfgmod
from . import harness
from .errors import ConfigError, DataError, NumericError, QReplayError


def _cmd_run(args):
    cfg = cfgmod.load(args.config)
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
        cfgmod.validate(cfg)
    for assignment in args.override or []:
        cfgmod.apply_override(cfg, assignment)
    paths = harness.run_experiment(cfg)
    for p in paths["raw"]:
        print(f"wrote {p}")
    print(f"wrote {paths['aggregate']}")
    return 0


def _read_raw(paths):
    rows = []
    for p in paths:
        with open(p) as f:
            rows.extend(harness.parse_raw_csv(f.read()))
    if not rows:
        raise DataError("no rows found in the given raw CSVs")
    return rows


def _cmd_aggregate(args):
    rows = _read_raw(args.raw)
    lines = harness.aggregate_rows(rows, args.window)
    with open(args.out, "w") as f:
        f.write("\n".join(lines) + "\n")
    print(f"wrote {args.out}")
    return 0


def _cmd_rank_report(args):
    rows = [r for r in _read_raw(args.raw) if r.phase == "rank"]
    if not rows:
        raise DataError("no rank rows in the given raw CSVs (diagnostics off?)")
    seeds = sorted({r.seed for r in rows})
    tasks = sorted({r.task for r in rows})
    table = {(r.seed, r.task): r.value for r in rows}
    lines = ["task,mean_normalized_erank,std_normalized_erank"]
    means = []
    for t in tasks:
        vals = [table[(s, t)] for s in seeds if (s, t) in table]
        mu = float(np.mean(vals))
        sd = float(np.std(vals))
        means.append(mu)
        lines.append(f"{t},{mu!r},{sd!r}")
    with open(args.out, "w") as f:
        f.write("\n".join(lines) + "\n")
    q = max(1, len(means) // 4)
    print(f"wrote {args.out}")
    print(f"first-quartile mean: {np.mean(means[:q]):.6f}")
    print(f"last-quartile mean:  {np.mean(means[-q:]):.6f}")
    return 0


def _cmd_validate_config(args):
    cfgmod.load(args.config)
    print(f"{args.config}: OK")
    return 0


def _cmd_synth_data(args):
    from . import synthdata

    images, labels = synthdata.make_synthetic_corpus(
        args.out, n_images=args.images, seed=args.seed
    )
    print(f"wrote {images}")
    print(f"wrote {labels}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qreplay",
        description="Continual-learning benchmark engine (query-only attention, "
        "attention/MAML/BP/CBP learners, rank diagnostics)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config or preset")
    p_run.add_argument("--config", required=True, help="YAML path or preset name")
    p_run.add_argument("--seed", type=int, default=None, help="run a single seed")
    p_run.add_argument(
        "--override", action="append", metavar="KEY=VALUE",
        help="dotted config override, repeatable",
    )
    p_run.set_defaults(func=_cmd_run)

    p_agg = sub.add_parser("aggregate", help="aggregate raw CSVs across seeds")
    p_agg.add_argument("raw", nargs="+", help="raw per-seed CSV files")
    p_agg.add_argument("--out", required=True)
    p_agg.add_argument("--window", type=int, default=1)
    p_agg.set_defaults(func=_cmd_aggregate)

    p_rank = sub.add_parser("rank-report", help="summarize effective-rank rows")
    p_rank.add_argument("raw", nargs="+", help="raw per-seed CSV files")
    p_rank.add_argument("--out", required=True)
    p_rank.set_defaults(func=_cmd_rank_report)

    p_val = sub.add_parser("validate-config", help="schema-check a config")
    p_val.add_argument("config", help="YAML path or preset name")
    p_val.set_defaults(func=_cmd_validate_config)

    p_synth = sub.add_parser("synth-data", help="write a synthetic IDX corpus")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.add_argument("--images", type=int, default=60_000)
    p_synth.add_argument("--seed", type=int, default=12345)
    p_synth.set_defaults(func=_cmd_synth_data)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except QReplayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
