"""Command-line entry point ``bench``.

    bench run <config.json> [--out DIR] [--parallel N] [--seed S]
    bench exp1 [--out DIR] [--parallel N] [--seed S] [--runs N] [--steps T]
    bench exp2 [...same...]
    bench validate <config.json>

Exit status: 0 success, 1 config error, 2 too many failed runs.  The output
directory defaults to ``$MMKALMAN_BENCH_OUT`` (or ``./bench_out``) with one
subdirectory per experiment name.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiments import ConfigError, build_exp1, build_exp2, load_config
from .runner import MAX_FAILED_FRACTION, default_out_dir, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="Student-t MM filter benchmarks")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", type=Path, help="output directory (default: $MMKALMAN_BENCH_OUT/<name>)")
        sp.add_argument("--parallel", type=int, default=1, metavar="N", help="worker processes")
        sp.add_argument("--seed", type=int, metavar="S", help="override the base seed")
        sp.add_argument("-q", "--quiet", action="store_true")

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("config", type=Path)
    common(run)
    for name in ("exp1", "exp2"):
        sp = sub.add_parser(name, help=f"run the built-in {name} experiment")
        common(sp)
        sp.add_argument("--runs", type=int, help="number of Monte-Carlo runs")
        sp.add_argument("--steps", type=int, help="steps per run")
    val = sub.add_parser("validate", help="check a config file without running it")
    val.add_argument("config", type=Path)
    return p


def _print_summary(report, out) -> None:
    rows = report.summary_rows()
    width = max(len(r["filter"]) for r in rows)
    print(f"{'filter':<{width}}  {'metric':<9} {'n':>4} {'rmse mean':>11} {'rmse std':>10} {'sec/run':>10}")
    for r in rows:
        print(
            f"{r['filter']:<{width}}  {r['metric']:<9} {r['n_ok']:>4} "
            f"{r['rmse_mean']:>11.5f} {r['rmse_std']:>10.5f} {r['seconds_mean']:>10.4f}"
        )
    print(f"results written to {out}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.command == "validate":
            spec = load_config(args.config)
            print(f"{args.config}: ok ({spec.name}, {len(spec.filters)} filters, {spec.n_runs} runs x {spec.T} steps)")
            return EXIT_OK
        if args.command == "run":
            spec = load_config(args.config)
        else:
            build = build_exp1 if args.command == "exp1" else build_exp2
            kw = {}
            if args.runs is not None:
                kw["n_runs"] = args.runs
            if args.steps is not None:
                kw["T"] = args.steps
            spec = build(**kw)
        if args.seed is not None:
            spec = spec.with_overrides(base_seed=args.seed)
        if args.parallel < 1:
            raise ConfigError("--parallel must be at least 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out if args.out is not None else default_out_dir() / spec.name
    report = run_experiment(spec, parallelism=args.parallel, out_dir=out)
    if not args.quiet:
        _print_summary(report, out)
    if report.failed:
        print(
            f"error: {len(report.failed_runs)} of {spec.n_runs} runs failed "
            f"(limit {MAX_FAILED_FRACTION:.0%})",
            file=sys.stderr,
        )
        return EXIT_FAILED
    if report.failed_runs:
        print(f"warning: {len(report.failed_runs)} failed runs excluded", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
