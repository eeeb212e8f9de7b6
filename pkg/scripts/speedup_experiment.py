#!/usr/bin/env python3
"""Machine-doubling experiment in the noise-dominated regime.

Runs the grid-tuned sweep described by configs/speedup.json through the
standard experiment harness, then replays each tuned cell and reports the
ratio of mean excess loss at the method's designated output point between
the two machine counts. With zero heterogeneity and dominant gradient noise
the statistically optimal term scales as 1/sqrt(M*K*R), so doubling M should
shrink the tuned excess by about sqrt(2) = 1.41.

The per-round excess_loss column in runs.csv tracks the consensus iterate,
not the averaged output point, so the ratio is computed from the replays.

Usage: python3 scripts/speedup_experiment.py [--config configs/speedup.json]
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from slowcal_lab import (
    ALGORITHMS,
    RunConfig,
    build_problem,
    excess_loss,
    load_spec,
    parse_schedule,
    run_experiment,
)

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "speedup.json"


def start_point(x0: str, dim: int) -> np.ndarray | None:
    if x0 == "zeros":
        return None
    return float(x0[len("ones:"):]) * np.ones(dim) / math.sqrt(dim)


def tuned_output_means(spec, resolved_lr: dict[str, float]) -> dict:
    """Mean excess at x_output per (algorithm, machine count), at the step
    sizes the harness resolved."""
    k = spec.local_steps[0]
    rounds = spec.rounds if spec.rounds is not None else spec.total_steps // k
    schedule = parse_schedule(spec.schedule)
    means = {}
    for m in spec.machines:
        problem = build_problem(spec.problem, m)
        x0 = start_point(spec.x0, problem.dim)
        for name in spec.algorithms:
            eta = resolved_lr[f"{name}-M{m}-K{k}"]
            scores = []
            for seed in spec.seeds:
                cfg = RunConfig(M=1 if name == "anytime" else m, K=k, R=rounds,
                                eta=eta, schedule=schedule, seed=seed, x0=x0)
                traj = ALGORITHMS[name](problem, cfg)
                scores.append(excess_loss(problem, traj.x_output))
            means[(name, m)] = float(np.mean(scores))
    return means


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(DEFAULT_CONFIG))
    parser.add_argument("--out", default=None, help="output directory override")
    args = parser.parse_args(argv)

    spec = load_spec(args.config)
    if len(spec.machines) != 2 or len(spec.local_steps) != 1:
        print("config must sweep exactly two machine counts at one local-step "
              f"count, got machines={spec.machines} local_steps={spec.local_steps}",
              file=sys.stderr)
        return 2
    small, large = sorted(spec.machines)

    summary = run_experiment(spec, out_dir=args.out)
    print(f"wrote {summary.num_runs} runs to {summary.csv_path}")
    manifest = json.loads(summary.manifest_path.read_text())
    means = tuned_output_means(spec, manifest["resolved_lr"])

    print(f"{'method':<12} {'M=' + str(small):>12} {'M=' + str(large):>12} {'ratio':>8}")
    for name in spec.algorithms:
        lo, hi = means[(name, small)], means[(name, large)]
        print(f"{name:<12} {lo:>12.4g} {hi:>12.4g} {lo / hi:>8.3f}")
    print("(noise-dominated prediction for M x2: about 1.41)")
    return 1 if summary.any_diverged else 0


if __name__ == "__main__":
    sys.exit(main())
