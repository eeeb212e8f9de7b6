"""Parameter-server loops: minibatch SGD, local SGD (plain and weighted),
the single-worker query-averaging method, and its drift-corrected local
variant.

All four share the same communication pattern: R rounds, K local steps per
round, aggregation by ascending-machine-index averaging at every round
boundary. Stochastic draws are keyed by (seed, machine, round, step), so a
trajectory is a pure function of (problem, config) regardless of how the
per-machine loops are interleaved or parallelized.

Conventions shared by every runner:

* exactly R round records; record fields are measured at the round-end
  anchor, with dispersion/bias evaluated on the pre-aggregation worker
  states (post-aggregation they are identically zero);
* divergence (non-finite round excess, or round excess above 1e6 x the
  initial excess) freezes the run: the flag is sticky and the remaining
  round records carry +inf, never NaN;
* with record_diagnostics, per-step records store the post-aggregation
  machine means and the mean gradient actually applied at each step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import RoundMetrics, bias_increment, dispersion
from .weights import LINEAR, WeightSchedule, averaging_coeff, prefix_weight, weight_at

DIVERGENCE_FACTOR = 1e6


@dataclass
class RunConfig:
    M: int
    K: int
    R: int
    eta: float
    schedule: WeightSchedule = LINEAR
    seed: int = 0
    record_diagnostics: bool = False
    x0: np.ndarray | None = None


@dataclass
class WorkerState:
    """One machine's slots: the descent iterate w and the query point x."""

    w: np.ndarray
    x: np.ndarray


@dataclass
class ServerAnchor:
    """State broadcast at a round boundary; round = completed rounds."""

    round: int
    w: np.ndarray
    x: np.ndarray


@dataclass
class StepRecord:
    t: int
    w_mean: np.ndarray
    x_mean: np.ndarray
    g_mean: np.ndarray | None
    dispersion_q: float
    bias_increment: float


@dataclass
class Trajectory:
    algorithm: str
    eta: float
    schedule: WeightSchedule
    seed: int
    rounds: list[RoundMetrics]
    anchors: list[ServerAnchor]
    x_output: np.ndarray
    diverged: bool
    steps: list[StepRecord] | None = None


def _validate(problem, cfg: RunConfig, single_worker: bool = False) -> None:
    if cfg.K < 1 or cfg.R < 1:
        raise ValueError(f"K and R must be >= 1, got K={cfg.K} R={cfg.R}")
    if not (cfg.eta > 0 and math.isfinite(cfg.eta)):
        raise ValueError(f"eta must be a positive finite float, got {cfg.eta}")
    if cfg.seed < 0:
        raise ValueError(f"seed must be nonnegative, got {cfg.seed}")
    if single_worker:
        if cfg.M != 1:
            raise ValueError(f"this runner drives one logical worker; cfg.M must be 1, got {cfg.M}")
    elif cfg.M != problem.num_machines:
        raise ValueError(
            f"cfg.M={cfg.M} does not match the ensemble's {problem.num_machines} machines"
        )


def _start_point(problem, cfg: RunConfig) -> np.ndarray:
    if cfg.x0 is None:
        return np.zeros(problem.dim)
    x0 = np.asarray(cfg.x0, dtype=np.float64).copy()
    if x0.shape != (problem.dim,):
        raise ValueError(f"x0 shape {x0.shape} does not match problem dim {problem.dim}")
    return x0


def _ascending_mean(rows: np.ndarray) -> np.ndarray:
    acc = rows[0].copy()
    for i in range(1, rows.shape[0]):
        acc += rows[i]
    return acc / rows.shape[0]


class _Recorder:
    """Shared bookkeeping: round records, anchors, divergence freeze."""

    def __init__(self, problem, cfg: RunConfig, x_start: np.ndarray):
        self.problem = problem
        self.cfg = cfg
        self.rounds: list[RoundMetrics] = []
        self.anchors: list[ServerAnchor] = []
        self.steps: list[StepRecord] | None = [] if cfg.record_diagnostics else None
        self.diverged = False
        initial = problem.global_value(x_start) - problem.f_star
        self.threshold = DIVERGENCE_FACTOR * initial if initial > 0 else DIVERGENCE_FACTOR

    def place_anchor(self, completed: int, w: np.ndarray, x: np.ndarray) -> None:
        self.anchors.append(ServerAnchor(completed, w.copy(), x.copy()))

    def record_step(self, t: int, w_mean: np.ndarray, x_mean: np.ndarray,
                    g_mean: np.ndarray | None, x_states: np.ndarray) -> None:
        if self.steps is None:
            return
        alpha = weight_at(self.cfg.schedule, t)
        self.steps.append(StepRecord(
            t=t,
            w_mean=w_mean.copy(),
            x_mean=x_mean.copy(),
            g_mean=None if g_mean is None else g_mean.copy(),
            dispersion_q=dispersion(x_states, alpha),
            bias_increment=bias_increment(self.problem, x_states, alpha),
        ))

    def close_round(self, r: int, x_states: np.ndarray, w_mean: np.ndarray) -> bool:
        """Record round r from pre-aggregation states; returns True when the
        run just diverged and must freeze."""
        t = (r + 1) * self.cfg.K
        x_mean = _ascending_mean(x_states)
        excess = self.problem.global_value(x_mean) - self.problem.f_star
        grad = self.problem.global_gradient(x_mean)
        alpha = weight_at(self.cfg.schedule, t)
        w_gap = w_mean - self.problem.w_star
        values = {
            "excess_loss": excess,
            "grad_norm": float(np.linalg.norm(grad)),
            "dispersion_q": dispersion(x_states, alpha),
            "v_increment": bias_increment(self.problem, x_states, alpha),
            "d_t": float(w_gap @ w_gap),
        }
        bad = not all(math.isfinite(v) for v in values.values())
        if bad or excess > self.threshold:
            self.diverged = True
        clean = {k: (v if math.isfinite(v) else math.inf) for k, v in values.items()}
        self.rounds.append(RoundMetrics(round=r, t=t, diverged=self.diverged, **clean))
        return self.diverged

    def freeze_remaining(self, start_round: int) -> None:
        for r in range(start_round, self.cfg.R):
            self.rounds.append(RoundMetrics(
                round=r, t=(r + 1) * self.cfg.K,
                excess_loss=math.inf, grad_norm=math.inf, dispersion_q=math.inf,
                v_increment=math.inf, d_t=math.inf, diverged=True,
            ))


def run_minibatch(problem, cfg: RunConfig) -> Trajectory:
    """Synchronous minibatch SGD: one model step per round, each machine
    contributing the mean of K stochastic gradients at the round anchor."""
    _validate(problem, cfg)
    m, k_steps = cfg.M, cfg.K
    x = _start_point(problem, cfg)
    rec = _Recorder(problem, cfg, x)
    rec.place_anchor(0, x, x)

    with np.errstate(over="ignore", invalid="ignore"):
        for r in range(cfg.R):
            per_step = np.zeros((k_steps, problem.dim))
            for i in range(m):
                sampler = problem.round_sampler(cfg.seed, i, r, k_steps)
                for k in range(k_steps):
                    per_step[k] += sampler(k, x)
            per_step /= m
            if rec.steps is not None:
                tiled = np.tile(x, (m, 1))
                for k in range(k_steps):
                    rec.record_step(r * k_steps + k, x, x, per_step[k], tiled)
            x = x - cfg.eta * per_step.mean(axis=0)
            rec.place_anchor(r + 1, x, x)
            if rec.close_round(r, np.tile(x, (m, 1)), x):
                rec.freeze_remaining(r + 1)
                break

    if rec.steps is not None:
        rec.record_step(rec.anchors[-1].round * k_steps, x, x, None, np.tile(x, (m, 1)))
    finished = [a.x for a in rec.anchors[1:]]
    x_output = _ascending_mean(np.stack(finished)) if finished else x.copy()
    return Trajectory("minibatch", cfg.eta, cfg.schedule, cfg.seed, rec.rounds, rec.anchors,
                      x_output, rec.diverged, rec.steps)


def run_local(problem, cfg: RunConfig, weighted: bool = False) -> Trajectory:
    """Local SGD: machines run K SGD steps on their own objective, the
    server averages iterates at round boundaries. The weighted variant
    scales step t by alpha_t and outputs the alpha-weighted average of the
    per-step machine means; the plain variant outputs the last anchor."""
    _validate(problem, cfg)
    m, k_steps = cfg.M, cfg.K
    start = _start_point(problem, cfg)
    iterates = np.tile(start, (m, 1))
    rec = _Recorder(problem, cfg, start)
    rec.place_anchor(0, start, start)

    total_steps = cfg.K * cfg.R
    weighted_acc = weight_at(cfg.schedule, 0) * start if weighted else None

    with np.errstate(over="ignore", invalid="ignore"):
        for r in range(cfg.R):
            samplers = [problem.round_sampler(cfg.seed, i, r, k_steps) for i in range(m)]
            for k in range(k_steps):
                t = r * k_steps + k
                alpha = weight_at(cfg.schedule, t) if weighted else 1.0
                grads = np.zeros_like(iterates)
                for i in range(m):
                    grads[i] = samplers[i](k, iterates[i])
                if rec.steps is not None:
                    mean_now = _ascending_mean(iterates)
                    rec.record_step(t, mean_now, mean_now, _ascending_mean(grads), iterates)
                iterates -= cfg.eta * alpha * grads
                if weighted:
                    weighted_acc = weighted_acc + weight_at(cfg.schedule, t + 1) * _ascending_mean(iterates)
            pre_mean = _ascending_mean(iterates)
            diverged_now = rec.close_round(r, iterates, pre_mean)
            iterates = np.tile(pre_mean, (m, 1))
            rec.place_anchor(r + 1, pre_mean, pre_mean)
            if diverged_now:
                rec.freeze_remaining(r + 1)
                break

    final_mean = _ascending_mean(iterates)
    if rec.steps is not None:
        rec.record_step(rec.anchors[-1].round * k_steps, final_mean, final_mean, None, iterates)
    if weighted:
        x_output = weighted_acc / prefix_weight(cfg.schedule, total_steps)
        name = "local-weighted"
    else:
        x_output = rec.anchors[-1].x.copy()
        name = "local"
    return Trajectory(name, cfg.eta, cfg.schedule, cfg.seed, rec.rounds, rec.anchors,
                      x_output, rec.diverged, rec.steps)


def run_anytime_single(problem, cfg: RunConfig) -> Trajectory:
    """Single-worker query-averaging SGD. The iterate w descends along
    gradients taken at the running weighted average x of all iterates:

        w_{t+1} = w_t - eta * alpha_t * g(x_t)
        x_{t+1} = (1 - gamma_{t+1}) x_t + gamma_{t+1} w_{t+1}

    cfg.M must be 1 (one logical worker); the gradient oracle is the
    machine-averaged stochastic gradient of the ensemble, which with
    sigma=0 is exactly the batch gradient of the global objective."""
    _validate(problem, cfg, single_worker=True)
    k_steps = cfg.K
    ensemble_m = problem.num_machines
    x = _start_point(problem, cfg)
    w = x.copy()
    rec = _Recorder(problem, cfg, x)
    rec.place_anchor(0, w, x)

    with np.errstate(over="ignore", invalid="ignore"):
        for r in range(cfg.R):
            samplers = [problem.round_sampler(cfg.seed, i, r, k_steps) for i in range(ensemble_m)]
            for k in range(k_steps):
                t = r * k_steps + k
                grad = samplers[0](k, x).copy()
                for i in range(1, ensemble_m):
                    grad += samplers[i](k, x)
                grad /= ensemble_m
                if rec.steps is not None:
                    rec.record_step(t, w, x, grad, np.tile(x, (ensemble_m, 1)))
                w = w - cfg.eta * weight_at(cfg.schedule, t) * grad
                gamma = averaging_coeff(cfg.schedule, t)
                x = (1.0 - gamma) * x + gamma * w
            rec.place_anchor(r + 1, w, x)
            if rec.close_round(r, np.tile(x, (ensemble_m, 1)), w):
                rec.freeze_remaining(r + 1)
                break

    if rec.steps is not None:
        rec.record_step(rec.anchors[-1].round * k_steps, w, x, None, np.tile(x, (ensemble_m, 1)))
    return Trajectory("anytime", cfg.eta, cfg.schedule, cfg.seed, rec.rounds, rec.anchors,
                      x.copy(), rec.diverged, rec.steps)


def run_slowcal(problem, cfg: RunConfig) -> Trajectory:
    """Drift-corrected local SGD: every machine runs the query-averaging
    recursion locally, querying gradients at its running weighted average
    of iterates instead of at the iterates themselves; the server averages
    both slots at round boundaries."""
    _validate(problem, cfg)
    m, k_steps = cfg.M, cfg.K
    start = _start_point(problem, cfg)
    w = np.tile(start, (m, 1))
    x = np.tile(start, (m, 1))
    rec = _Recorder(problem, cfg, start)
    rec.place_anchor(0, start, start)

    with np.errstate(over="ignore", invalid="ignore"):
        for r in range(cfg.R):
            samplers = [problem.round_sampler(cfg.seed, i, r, k_steps) for i in range(m)]
            for k in range(k_steps):
                t = r * k_steps + k
                alpha = weight_at(cfg.schedule, t)
                gamma = averaging_coeff(cfg.schedule, t)
                grads = np.zeros_like(x)
                for i in range(m):
                    grads[i] = samplers[i](k, x[i])
                if rec.steps is not None:
                    rec.record_step(t, _ascending_mean(w), _ascending_mean(x),
                                    _ascending_mean(grads), x)
                w -= cfg.eta * alpha * grads
                x *= (1.0 - gamma)
                x += gamma * w
            w_mean = _ascending_mean(w)
            diverged_now = rec.close_round(r, x, w_mean)
            x_mean = _ascending_mean(x)
            w = np.tile(w_mean, (m, 1))
            x = np.tile(x_mean, (m, 1))
            rec.place_anchor(r + 1, w_mean, x_mean)
            if diverged_now:
                rec.freeze_remaining(r + 1)
                break

    if rec.steps is not None:
        rec.record_step(rec.anchors[-1].round * k_steps, _ascending_mean(w),
                        _ascending_mean(x), None, x)
    return Trajectory("slowcal", cfg.eta, cfg.schedule, cfg.seed, rec.rounds, rec.anchors,
                      rec.anchors[-1].x.copy(), rec.diverged, rec.steps)


def run_local_weighted(problem, cfg: RunConfig) -> Trajectory:
    return run_local(problem, cfg, weighted=True)


ALGORITHMS = {
    "minibatch": run_minibatch,
    "local": run_local,
    "local-weighted": run_local_weighted,
    "anytime": run_anytime_single,
    "slowcal": run_slowcal,
}
