"""Command-line front end.

One subcommand per experiment; flags override values from an optional JSON
config file.  Exit codes: 0 all verdicts passed, 1 a verdict failed,
2 configuration or runtime error.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import (
    EXPERIMENTS,
    ConfigError,
    ExperimentReport,
    parse_config,
    run_experiment,
)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kacsim",
        description="Collision-model experiments: contraction rates, coupling"
        " bounds, law equivalence and the mean-field limit.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", metavar="JSON", help="config file; flags override")
        p.add_argument("--n", type=int, dest="n_particles", help="particle count")
        p.add_argument("--m", type=int, dest="ensemble_size", help="ensemble size")
        p.add_argument("--horizon", type=float, help="simulation end time")
        p.add_argument("--grid", type=int, dest="grid_points", help="grid points")
        p.add_argument("--replicas", type=int, help="Monte Carlo replicas")
        p.add_argument("--seed", type=int, help="64-bit unsigned master seed")
        p.add_argument("--init-v", dest="init_v", help="first system initial kind")
        p.add_argument("--init-w", dest="init_w", help="second system initial kind")
        p.add_argument(
            "--formulation",
            choices=["radial", "rotation", "energy"],
            help="collision rule (where applicable)",
        )
        p.add_argument("--out", dest="output_dir", help="output directory")
        p.add_argument("--workers", type=int, help="parallel workers over blocks")
        p.add_argument("--batch-size", type=int, dest="batch_size", help="replicas per block")
        p.add_argument("--z", type=float, help="sigma band for pointwise checks")
        p.add_argument("--rate-rtol", type=float, dest="rate_rtol", help="relative rate tolerance")
        p.add_argument("--rate-lo", type=float, dest="rate_lo", help="rate window lower edge")
        p.add_argument("--rate-hi", type=float, dest="rate_hi", help="rate window upper edge")
        p.add_argument("--ks-alpha", type=float, dest="ks_alpha", help="KS significance")
    return parser


_OVERRIDE_KEYS = (
    "n_particles",
    "ensemble_size",
    "horizon",
    "grid_points",
    "replicas",
    "seed",
    "init_v",
    "init_w",
    "formulation",
    "output_dir",
    "workers",
    "batch_size",
    "z",
    "rate_rtol",
    "rate_lo",
    "rate_hi",
    "ks_alpha",
)


def _print_report(report: ExperimentReport) -> None:
    print(f"experiment: {report.experiment}")
    for verdict in report.verdicts:
        print(f"  {verdict.line()}")
        for key, val in verdict.observed.items():
            print(f"      {key} = {val}")
    if report.rate_fit is not None:
        fit = report.rate_fit
        print(
            f"  rate: lambda_hat={fit['lambda_hat']:.6g}"
            f" +- {fit['stderr']:.2g} (theory {fit['lambda_theory']:.6g})"
        )
    out = report.telemetry.get("output_dir")
    if out:
        print(f"  results: {out}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}
    try:
        config = parse_config(args.experiment, args.config, overrides)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        report = run_experiment(config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    _print_report(report)
    return EXIT_PASS if report.all_passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
