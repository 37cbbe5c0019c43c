"""Command line interface: run tuning campaigns and inspect benchmark cases.

Exit codes: 0 on success, 1 on configuration errors, 2 on I/O errors.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import harness, plant


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to the JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="override the base seed")
    p.add_argument("--out", default=None, help="override the output directory")
    p.add_argument("--budget", type=int, default=None, help="override the evaluation budget")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tune",
        description="Crash-aware local Bayesian optimization benchmark harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one campaign (one case, one optimizer)")
    _add_common(run_p)

    case_p = sub.add_parser("case", help="inspect benchmark cases")
    case_p.add_argument("--list", action="store_true", help="list the available cases")

    cmp_p = sub.add_parser("compare", help="run both optimizers and a joint summary")
    _add_common(cmp_p)
    return parser


def _apply_overrides(cfg: harness.ExperimentConfig, args) -> harness.ExperimentConfig:
    changes = {}
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    if args.budget is not None:
        changes["budget"] = args.budget
    if not changes:
        return cfg
    return harness.ExperimentConfig(
        case=cfg.case,
        optimizer=cfg.optimizer,
        budget=changes.get("budget", cfg.budget),
        repeats=cfg.repeats,
        base_seed=changes.get("base_seed", cfg.base_seed),
        out_dir=changes.get("out_dir", cfg.out_dir),
        gibo_overrides=cfg.gibo_overrides,
    )


def _cmd_run(args) -> int:
    cfg = _apply_overrides(harness.load_config(args.config), args)
    summary = harness.run_campaign(cfg)
    paths = harness.write_outputs(summary, cfg.out_dir)
    feasible = np.isfinite(summary.finals)
    if not feasible.any():
        print("warning: no feasible evaluation in any repeat", file=sys.stderr)
    median = np.median(summary.finals[feasible]) if feasible.any() else float("nan")
    print(
        f"{cfg.optimizer} on {cfg.case}: {cfg.repeats} repeats x {cfg.budget} evals, "
        f"median final {median:.6g}, crashes {int(summary.crash_counts.sum())}, "
        f"{summary.wall_seconds:.1f}s"
    )
    for p in paths:
        print(f"  wrote {p}")
    return 0


def _cmd_case(args) -> int:
    if not args.list:
        print("nothing to do; use --list", file=sys.stderr)
        return 1
    for name in plant.case_names():
        case = plant.make_case(name)
        print(
            f"{name}: {case.d} params, objective {case.objective}, "
            f"crash threshold {case.crash_threshold} l"
        )
    return 0


def _cmd_compare(args) -> int:
    cfg = _apply_overrides(harness.load_config(args.config, optimizer_required=False), args)
    results = harness.run_compare(cfg, cfg.out_dir)
    for name, summary in results.items():
        print(
            f"{name}: median final {np.median(summary.finals):.6g}, "
            f"crashes {int(summary.crash_counts.sum())}, {summary.wall_seconds:.1f}s"
        )
    print(f"  wrote {cfg.out_dir}/compare.csv")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "case":
            return _cmd_case(args)
        return _cmd_compare(args)
    except (harness.ConfigError, plant.UnsupportedCaseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
