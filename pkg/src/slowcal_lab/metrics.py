"""Run diagnostics: excess loss, query dispersion, bias increments, and the
momentum-form residual of the query-averaging recursion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .weights import prefix_weight, weight_at


@dataclass(frozen=True)
class RoundMetrics:
    """One CSV row worth of per-round measurements."""

    round: int
    t: int                 # per-machine sample count consumed after this round
    excess_loss: float
    grad_norm: float
    dispersion_q: float    # weighted query spread at the round end, pre-aggregation
    v_increment: float     # weighted squared bias of the mean queried gradient
    d_t: float             # squared distance of the averaged iterate to the optimum
    diverged: bool


def excess_loss(problem, x: np.ndarray) -> float:
    return problem.global_value(np.asarray(x, dtype=np.float64)) - problem.f_star


def dispersion(states: np.ndarray, alpha: float) -> float:
    """(alpha^2 / M^2) * sum over ordered pairs (i, j) of ||x_i - x_j||^2.

    Computed through the centered identity sum_ij ||x_i - x_j||^2
    = 2 M sum_i ||x_i - mean||^2.
    """
    pts = np.atleast_2d(np.asarray(states, dtype=np.float64))
    m = pts.shape[0]
    centered = pts - pts.mean(axis=0, keepdims=True)
    return float(alpha ** 2 * 2.0 / m * (centered ** 2).sum())


def bias_increment(problem, states: np.ndarray, alpha: float) -> float:
    """alpha^2 ||mean_i grad_i(x_i) - grad f(mean_i x_i)||^2 for one step's
    per-machine query points (one row per machine)."""
    pts = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if pts.shape[0] != problem.num_machines:
        raise ValueError(f"need one state row per machine, got {pts.shape[0]}")
    mean_grad = np.zeros(pts.shape[1])
    for i in range(pts.shape[0]):
        mean_grad += problem.exact_gradient(i, pts[i])
    mean_grad /= pts.shape[0]
    gap = mean_grad - problem.global_gradient(pts.mean(axis=0))
    return float(alpha ** 2 * (gap @ gap))


def momentum_residual(trajectory) -> float:
    """Max residual of the momentum form of the query-averaging recursion:

        (x_{t+1} - x_t) / eta  must equal
        -(alpha_{t+1} / (alpha_{0:t+1} alpha_{0:t})) * sum_{n<=t} alpha_n alpha_{0:n} g_n

    Exact algebra for any gradient sequence, so the residual is pure float
    rounding. Requires per-step records (record_diagnostics=True)."""
    steps = trajectory.steps
    if not steps:
        raise ValueError("momentum_residual needs a trajectory with per-step records")
    schedule = trajectory.schedule
    eta = trajectory.eta
    weighted_sum = np.zeros_like(steps[0].x_mean)
    worst = 0.0
    for t in range(len(steps) - 1):
        rec = steps[t]
        if rec.g_mean is None:
            raise ValueError(f"step record {t} is missing its gradient")
        weighted_sum = weighted_sum + weight_at(schedule, t) * prefix_weight(schedule, t) * rec.g_mean
        coeff = weight_at(schedule, t + 1) / (
            prefix_weight(schedule, t + 1) * prefix_weight(schedule, t)
        )
        residual = (steps[t + 1].x_mean - rec.x_mean) / eta + coeff * weighted_sum
        worst = max(worst, float(np.linalg.norm(residual)))
    return worst
