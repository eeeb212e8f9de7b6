"""Step-size selection and round-complexity floors."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .algorithms import ALGORITHMS, RunConfig
from .metrics import excess_loss


class GridSearchError(RuntimeError):
    """Every candidate step size diverged."""


@dataclass(frozen=True)
class LrInputs:
    smoothness: float
    sigma: float
    gstar: float
    b0: float
    M: int
    K: int
    R: int


def theoretical_lr(inp: LrInputs) -> float:
    """Worst-case step size for the drift-corrected method under linear
    weights: the minimum of five caps over T = K*R total local steps.
    Noise- or heterogeneity-free caps degenerate to +inf and drop out."""
    if inp.smoothness <= 0:
        raise ValueError(f"smoothness must be positive, got {inp.smoothness}")
    if min(inp.sigma, inp.gstar, inp.b0) < 0:
        raise ValueError("sigma, gstar and b0 must be nonnegative")
    if min(inp.M, inp.K, inp.R) < 1:
        raise ValueError(f"M, K, R must be >= 1, got {(inp.M, inp.K, inp.R)}")
    big_l, sigma, gstar, b0 = inp.smoothness, inp.sigma, inp.gstar, inp.b0
    total = inp.K * inp.R
    caps = [
        1.0 / (48.0 * big_l * (total + 1)),
        1.0 / (10.0 * big_l * inp.K ** 2),
        1.0 / (40.0 * big_l * inp.K * (total + 1) ** (2.0 / 3.0)),
    ]
    if sigma > 0:
        caps.append(b0 * math.sqrt(inp.M) / (sigma * total ** 1.5))
    root_noise = math.sqrt(sigma) + math.sqrt(gstar)
    if root_noise > 0:
        caps.append(math.sqrt(b0) / (math.sqrt(big_l) * inp.K ** 1.75 * inp.R * root_noise))
    eta = min(caps)
    if not eta > 0:
        raise ValueError(f"degenerate step size {eta}; check b0/sigma/gstar inputs")
    return eta


def grid_search(problem, algorithm: str, grid, cfg: RunConfig, seeds,
                score_fn=None) -> tuple[float, dict[float, list[float]]]:
    """Tune eta by mean score over seeds (default score: final excess loss at
    the output point; diverged runs score +inf). Ties break toward the
    smaller step size. Returns (best_eta, per-eta per-seed score table)."""
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}, expected one of {sorted(ALGORITHMS)}")
    candidates = sorted(float(v) for v in grid)
    if not candidates:
        raise ValueError("empty step-size grid")
    runner = ALGORITHMS[algorithm]
    if score_fn is None:
        def score_fn(prob, traj):
            return excess_loss(prob, traj.x_output)

    table: dict[float, list[float]] = {}
    best_eta, best_mean = None, math.inf
    for eta in candidates:
        scores = []
        for seed in seeds:
            traj = runner(problem, replace(cfg, eta=eta, seed=int(seed)))
            value = math.inf if traj.diverged else float(score_fn(problem, traj))
            scores.append(value if math.isfinite(value) else math.inf)
        table[eta] = scores
        mean = sum(scores) / len(scores)
        if mean < best_mean:
            best_eta, best_mean = eta, mean
    if best_eta is None:
        raise GridSearchError(f"every step size diverged on grid {candidates}")
    return best_eta, table


_RMIN_METHODS = ("minibatch", "accelerated-minibatch", "local", "slowcal")


def rmin(method: str, M: int, K: int, g: float = 0.0) -> float:
    """Communication rounds needed before the statistically optimal error
    term dominates, in the unit-constant sigma=1 convention. `g` is the
    method's own gradient-dissimilarity constant (the at-optimum constant
    for the drift-corrected method, the uniform one for the local
    baseline); minibatch floors ignore it."""
    if min(M, K) < 1:
        raise ValueError(f"M and K must be >= 1, got {(M, K)}")
    if g < 0:
        raise ValueError(f"dissimilarity must be nonnegative, got {g}")
    mk = float(M * K)
    if method == "minibatch":
        return mk
    if method == "accelerated-minibatch":
        return mk ** (1.0 / 3.0)
    if method == "local":
        return g ** 4 * mk ** 3 + float(M) ** 3 * K
    if method == "slowcal":
        return (g + 1.0) * M * math.sqrt(K)
    raise ValueError(f"unknown method {method!r}, expected one of {_RMIN_METHODS}")
