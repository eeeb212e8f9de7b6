"""Command-line entry point.

Exit codes: 0 ok, 1 divergence (any run, or an entirely-diverged grid),
2 config error, 3 verification failure.
"""
from __future__ import annotations

import argparse
import sys

from .objectives import DegenerateProblemError
from .runner import ConfigError, RunSummary, load_spec, mnist_experiment, run_experiment, sweep
from .tuning import GridSearchError
from .verify import verify_suite


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slowcal-lab",
        description="Distributed convex-optimization laboratory: drift-corrected "
                    "local SGD against minibatch and local baselines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one experiment config")
    run_p.add_argument("--config", required=True, help="JSON experiment config")
    run_p.add_argument("--out", default=None, help="output directory override")

    sweep_p = sub.add_parser("sweep", help="execute the config's full cartesian sweep")
    sweep_p.add_argument("--config", required=True, help="JSON experiment config")
    sweep_p.add_argument("--out", default=None, help="output directory override")

    sub.add_parser("verify", help="run the exact-identity self-check suite")

    mnist_p = sub.add_parser("mnist", help="run an MNIST softmax-regression config")
    mnist_p.add_argument("--config", required=True, help="JSON experiment config")
    mnist_p.add_argument("--data", default=None,
                         help="directory holding the four canonical MNIST IDX files")
    mnist_p.add_argument("--out", default=None, help="output directory override")
    return parser


def _report(summary: RunSummary) -> int:
    print(f"wrote {summary.num_runs} runs to {summary.csv_path}")
    print(f"manifest: {summary.manifest_path}")
    if summary.any_diverged:
        print("at least one run diverged", file=sys.stderr)
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _report(run_experiment(load_spec(args.config), out_dir=args.out))
        if args.command == "sweep":
            return _report(sweep(load_spec(args.config), out_dir=args.out))
        if args.command == "mnist":
            return _report(mnist_experiment(load_spec(args.config),
                                            data_dir=args.data, out_dir=args.out))
        report = verify_suite()
        for line in report.lines():
            print(line)
        if not report.all_passed:
            print("verification failed", file=sys.stderr)
            return 3
        print("all checks passed")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DegenerateProblemError as exc:
        print(f"config error: degenerate problem: {exc}", file=sys.stderr)
        return 2
    except GridSearchError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
