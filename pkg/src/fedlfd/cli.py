"""Command-line interface.

Subcommands: ``run`` a configuration, ``resume`` a checkpoint, ``compare``
metrics across strategies, ``validate`` a configuration. Exit codes:
0 success, 1 configuration or checkpoint error, 2 runtime divergence in at
least one cell (results still written), 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys

from .checkpoint import CheckpointError
from .config import ConfigError, load_config, with_overrides
from .harness import compare_strategies, resume, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGENCE = 2
EXIT_IO = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedlfd",
        description="Deterministic federated learning-from-demonstration simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the experiment grid described by a config file")
    run_p.add_argument("config", help="path to the JSON configuration")
    run_p.add_argument("--out", help="override the configured output directory")
    run_p.add_argument("--seed-offset", type=int, default=0, help="shift every configured seed")
    run_p.add_argument("--quiet", action="store_true", help="suppress console logging")

    resume_p = sub.add_parser("resume", help="continue a run from a cell checkpoint")
    resume_p.add_argument("checkpoint", help="path to the checkpoint file")
    resume_p.add_argument("--config", help="config file that must match the checkpoint hash")
    resume_p.add_argument("--out", help="override the output directory")
    resume_p.add_argument("--quiet", action="store_true", help="suppress console logging")

    compare_p = sub.add_parser("compare", help="compare strategies over a metrics directory")
    compare_p.add_argument("metrics_dir", help="directory holding metrics_*.csv files")
    compare_p.add_argument("--out", help="directory for the comparison artifacts")
    compare_p.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    compare_p.add_argument("--quiet", action="store_true", help="suppress console output")

    validate_p = sub.add_parser("validate", help="validate a config file and echo defaults")
    validate_p.add_argument("config", help="path to the JSON configuration")
    validate_p.add_argument("--quiet", action="store_true", help="print nothing on success")
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.out or args.seed_offset:
        config = with_overrides(config, output_dir=args.out, seed_offset=args.seed_offset)
    result = run_experiment(config, quiet=args.quiet)
    return EXIT_DIVERGENCE if result.exit_code == 2 else EXIT_OK


def _cmd_resume(args) -> int:
    config = load_config(args.config) if args.config else None
    result = resume(args.checkpoint, config, output_dir=args.out, quiet=args.quiet)
    return EXIT_DIVERGENCE if result.exit_code == 2 else EXIT_OK


def _cmd_compare(args) -> int:
    comparison = compare_strategies(
        args.metrics_dir, output_dir=args.out, render_figures=not args.no_plots
    )
    if not args.quiet:
        print(f"comparison report: {comparison.report_path}")
        for i, strategy in enumerate(comparison.ranking, start=1):
            print(f"  rank {i}: {strategy} (wins={comparison.wins[strategy]})")
        if comparison.ties:
            print(f"  ties: {comparison.ties}")
        for fig in comparison.figure_paths:
            print(f"  figure: {fig}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    config = load_config(args.config)
    if not args.quiet:
        print(f"config valid (hash {config.hash})")
        for line in config.defaults_applied:
            print(f"default applied: {line}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "resume":
            return _cmd_resume(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "validate":
            return _cmd_validate(args)
        raise AssertionError(f"unhandled command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
