"""Command-line entry point.

Exit codes: 0 success, 2 configuration problems, 3 IO failures.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .errors import ConfigValidationError
from .harness import SCHEMES, run, sweep_cmin, sweep_users, trace_convergence
from .scenario import ScenarioConfig, config_from_dict

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; defaults apply otherwise")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--drops", type=int, help="number of independent drops")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument(
        "--scheme",
        choices=[*SCHEMES, "all"],
        default="proposed",
        help="which scheme(s) to simulate",
    )
    p.add_argument("--workers", type=int, default=1, help="parallel drop workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flybs",
        description="Aerial base station placement and power simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate the configured scenario")
    _add_common(p_run)

    p_su = sub.add_parser("sweep-users", help="sweep the number of users")
    _add_common(p_su)
    p_su.add_argument(
        "--values", type=int, nargs="+", default=[100, 200, 300, 400, 500, 600]
    )

    p_sc = sub.add_parser("sweep-cmin", help="sweep the per-user rate floor")
    _add_common(p_sc)
    p_sc.add_argument(
        "--values", type=float, nargs="+", default=[0.25e6, 0.5e6, 0.75e6, 1.0e6]
    )

    p_tr = sub.add_parser(
        "trace-convergence",
        help="record per-iteration sum capacity inside each time step",
    )
    _add_common(p_tr)
    return parser


def _load_config(args) -> ScenarioConfig:
    if args.config:
        with open(args.config) as fh:
            config = config_from_dict(json.load(fh))
    else:
        config = ScenarioConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.drops is not None:
        config = dataclasses.replace(config, drops=args.drops)
    config.validate()
    return config


def _schemes(args) -> tuple[str, ...]:
    return SCHEMES if args.scheme == "all" else (args.scheme,)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args)
    except ConfigValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        if args.command == "run":
            summary = run(config, args.out, _schemes(args), args.workers)
            for s, stats in summary["schemes"].items():
                print(
                    f"{s}: mean sum capacity "
                    f"{stats['mean_sum_capacity_bps']:.4g} bits/s, "
                    f"infeasible rate {stats['infeasible_rate']:.3f}, "
                    f"mean iterations {stats['mean_iterations']:.2f}"
                )
            if summary.get("proposed_over_static") is not None:
                print(
                    "proposed over static: "
                    f"{100.0 * summary['proposed_over_static']:+.1f}%"
                )
        elif args.command == "sweep-users":
            rows = sweep_users(
                config, args.values, args.out, _schemes(args), args.workers
            )
            for r in rows:
                print(r)
        elif args.command == "sweep-cmin":
            rows = sweep_cmin(
                config, args.values, args.out, _schemes(args), args.workers
            )
            for r in rows:
                print(r)
        elif args.command == "trace-convergence":
            stats = trace_convergence(config, args.out)
            print(
                f"{stats['steps']} steps, mean {stats['mean_iterations']:.2f} "
                f"iterations, {100.0 * stats['fraction_within_10']:.1f}% "
                "within 10"
            )
    except OSError as exc:
        print(f"error: IO failure: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
