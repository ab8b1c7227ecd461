"""``ocs-lab`` command line entry point."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness import BOUNDS, COMMANDS, GEN_KINDS, MATCHERS, SELECTORS, ExperimentConfig, run
from .automata import BETA_DEFAULT, P_DEFAULT
from .matching import MatchingError
from .multiway import C_CUBIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocs-lab", description="Online correlated selection experiments.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--seed", type=int, default=0, help="master seed; fixes every random draw of the run")
    parser.add_argument("--trials", type=int, default=100_000, help="Monte Carlo trials per case")
    parser.add_argument("--instance", help="instance JSON file (replaces the generated corpus)")
    parser.add_argument("--out", help="write the report (or generated instance) here instead of stdout")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    parser.add_argument("--k", type=int, help="tournament depth / path length")
    parser.add_argument("--i", type=int, help="hardness instance parameter")
    parser.add_argument("--n", type=int, help="corpus size or instance size")
    parser.add_argument("--bound", choices=BOUNDS, default="semi", help="bound function for lp")
    parser.add_argument("--gamma", type=float, help="gamma for --bound gamma and the OCS suite")
    parser.add_argument("--selector", choices=SELECTORS, default="optimal", help="semi-OCS used by verify-semi")
    parser.add_argument("--matcher", choices=MATCHERS, default="two-choice")
    parser.add_argument("--kind", choices=GEN_KINDS, default="upper-triangular", help="instance family for gen")
    parser.add_argument("--p", type=float, default=P_DEFAULT, help="path automaton parameter")
    parser.add_argument("--beta", type=float, default=BETA_DEFAULT, help="forest automaton parameter")
    parser.add_argument("--c", type=float, default=C_CUBIC, help="cubic coefficient of the multi-way weight")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    return ExperimentConfig(
        command=args.command,
        seed=args.seed,
        trials=args.trials,
        instance=args.instance,
        k=args.k,
        i=args.i,
        n=args.n,
        bound=args.bound,
        selector=args.selector,
        matcher=args.matcher,
        kind=args.kind,
        gamma=args.gamma,
        p=args.p,
        beta=args.beta,
        c=args.c,
        out=args.out,
        format=args.format,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return 2
    config = config_from_args(args)
    try:
        report = run(config)
    except (ValueError, MatchingError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    if config.command == "gen":
        text = report.tables[0] + "\n"
    else:
        for table in report.tables:
            print(table, file=sys.stderr if config.out is None else sys.stdout)
        text = report.render()
    if config.out:
        Path(config.out).write_text(text)
    else:
        sys.stdout.write(text)
    if config.command != "gen":
        failed = report.failing()
        print(
            f"{len(report.rows) - len(failed)}/{len(report.rows)} rows passed (config {config.hash})",
            file=sys.stderr,
        )
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
