"""Declarative experiment execution.

A JSON config resolves to an ``ExperimentSpec``; the engine runs the
cartesian product algorithm x machines x local_steps x seeds, writes one
long-format ``runs.csv`` row per round, and a ``manifest.json`` that echoes
the fully-resolved spec, the resolved step sizes, and the problem scalars,
enough to re-run the experiment bit-identically (the wall_ms column and the
manifest timestamp are the only nondeterministic outputs).

Environment overrides: ``SLOWCAL_LAB_OUT`` replaces the config's output
directory (an explicit function/CLI argument still wins), ``SLOWCAL_LAB_JOBS``
sets the process-parallelism degree for synthetic sweeps.
"""
from __future__ import annotations

import dataclasses
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .algorithms import ALGORITHMS, RunConfig
from .data import LabeledDataset, dirichlet_partition, load_mnist, synth_clusters
from .objectives import LogisticEnsemble, heterogeneous_quadratic
from .tuning import LrInputs, grid_search, theoretical_lr
from .weights import parse_schedule

CSV_COLUMNS = [
    "run_id", "algorithm", "problem", "M", "K", "R", "seed", "round", "t",
    "eta", "excess_loss", "grad_norm", "dispersion_q", "v_increment", "d_t",
    "diverged", "wall_ms",
]

OUT_ENV = "SLOWCAL_LAB_OUT"
JOBS_ENV = "SLOWCAL_LAB_JOBS"

_PROBLEM_KINDS = ("quadratic", "synth-logistic", "mnist-logistic")

_SPEC_KEYS = {
    "name", "problem", "algorithm", "schedule", "machines", "local_steps",
    "rounds", "total_steps", "lr", "seeds", "diagnostics", "x0", "out_dir",
}

_PROBLEM_DEFAULTS: dict[str, dict[str, object]] = {
    "quadratic": {
        "dim": None, "curvature": "per-machine", "eig_range": [0.5, 2.0],
        "center_spread": 1.0, "target_gstar": None, "sigma": 0.0,
        "problem_seed": 0,
    },
    "synth-logistic": {
        "dim": None, "num_classes": 4, "l2": 1e-2, "spread": 0.3,
        "label_skew": 1.0, "n_per_machine": 64, "problem_seed": 0,
    },
    "mnist-logistic": {
        "data_dir": None, "l2": 1e-4, "label_skew": 0.1, "train_limit": None,
        "problem_seed": 0,
    },
}


class ConfigError(ValueError):
    """Invalid experiment configuration; the offending field is named."""


@dataclass(frozen=True)
class ExperimentSpec:
    """Fully-resolved experiment description (defaults already filled)."""

    name: str
    problem: dict
    algorithms: tuple[str, ...]
    schedule: str
    machines: tuple[int, ...]
    local_steps: tuple[int, ...]
    rounds: int | None
    total_steps: int | None
    lr: object  # "theory" | "fixed:<v>" | "grid:[...]" | {algorithm: one of those}
    seeds: tuple[int, ...]
    diagnostics: bool
    x0: str
    out_dir: str


@dataclass(frozen=True)
class RunSummary:
    out_dir: Path
    csv_path: Path
    manifest_path: Path
    num_runs: int
    any_diverged: bool


# ---------------------------------------------------------------- parsing

def _as_int(value, field: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"field {field!r} must be an integer, got {value!r}")
    return value


def _as_float(value, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"field {field!r} must be a number, got {value!r}")
    return float(value)


def _as_str(value, field: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"field {field!r} must be a string, got {value!r}")
    return value


def _as_int_tuple(value, field: str, minimum: int) -> tuple[int, ...]:
    items = value if isinstance(value, list) else [value]
    if not items:
        raise ConfigError(f"field {field!r} must be a nonempty integer or list")
    out = tuple(_as_int(v, field) for v in items)
    if any(v < minimum for v in out):
        raise ConfigError(f"field {field!r} entries must be >= {minimum}, got {list(out)}")
    return out


def _as_str_tuple(value, field: str) -> tuple[str, ...]:
    items = value if isinstance(value, list) else [value]
    if not items or not all(isinstance(v, str) for v in items):
        raise ConfigError(f"field {field!r} must be a string or nonempty list of strings")
    return tuple(items)


def _parse_lr_string(text: str, field: str) -> tuple[str, object]:
    """Validate one step-size directive; returns (mode, payload)."""
    if text == "theory":
        return "theory", None
    if text.startswith("fixed:"):
        try:
            value = float(text[len("fixed:"):])
        except ValueError as exc:
            raise ConfigError(f"field {field!r}: bad fixed step size {text!r}") from exc
        if not (value > 0 and math.isfinite(value)):
            raise ConfigError(f"field {field!r}: fixed step size must be positive finite")
        return "fixed", value
    if text.startswith("grid:"):
        try:
            grid = json.loads(text[len("grid:"):])
        except json.JSONDecodeError as exc:
            raise ConfigError(f"field {field!r}: bad grid literal {text!r}") from exc
        if (not isinstance(grid, list) or not grid
                or not all(isinstance(v, (int, float)) and v > 0 for v in grid)):
            raise ConfigError(f"field {field!r}: grid must be a nonempty list of positive numbers")
        return "grid", [float(v) for v in grid]
    raise ConfigError(
        f"field {field!r} must be 'theory', 'fixed:<v>' or 'grid:[...]', got {text!r}"
    )


def _validate_lr(lr, algorithms: tuple[str, ...]):
    if isinstance(lr, str):
        _parse_lr_string(lr, "lr")
        return lr
    if isinstance(lr, dict):
        for algorithm in algorithms:
            if algorithm not in lr:
                raise ConfigError(f"field 'lr' mapping is missing algorithm {algorithm!r}")
        for key, text in lr.items():
            if key not in ALGORITHMS:
                raise ConfigError(f"field 'lr' mapping names unknown algorithm {key!r}")
            _parse_lr_string(_as_str(text, f"lr[{key}]"), f"lr[{key}]")
        return dict(lr)
    raise ConfigError(f"field 'lr' must be a string or an algorithm mapping, got {lr!r}")


def _resolve_problem(raw, field: str = "problem") -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"field {field!r} must be an object with a 'kind' key")
    kind = raw.get("kind")
    if kind not in _PROBLEM_KINDS:
        raise ConfigError(f"field '{field}.kind' must be one of {_PROBLEM_KINDS}, got {kind!r}")
    defaults = _PROBLEM_DEFAULTS[kind]
    unknown = set(raw) - set(defaults) - {"kind"}
    if unknown:
        raise ConfigError(f"unknown {kind} problem field(s): {sorted(unknown)}")
    prob: dict = {"kind": kind}
    for key, default in defaults.items():
        prob[key] = raw.get(key, default)

    if kind in ("quadratic", "synth-logistic"):
        if prob["dim"] is None:
            raise ConfigError(f"field '{field}.dim' is required for {kind} problems")
        prob["dim"] = _as_int(prob["dim"], "problem.dim")
    prob["problem_seed"] = _as_int(prob["problem_seed"], "problem.problem_seed")
    if kind == "quadratic":
        if prob["curvature"] not in ("shared", "per-machine"):
            raise ConfigError("field 'problem.curvature' must be 'shared' or 'per-machine'")
        rng = prob["eig_range"]
        if not (isinstance(rng, (list, tuple)) and len(rng) == 2):
            raise ConfigError("field 'problem.eig_range' must be a [lo, hi] pair")
        prob["eig_range"] = [_as_float(rng[0], "problem.eig_range"),
                             _as_float(rng[1], "problem.eig_range")]
        prob["center_spread"] = _as_float(prob["center_spread"], "problem.center_spread")
        prob["sigma"] = _as_float(prob["sigma"], "problem.sigma")
        if prob["target_gstar"] is not None:
            prob["target_gstar"] = _as_float(prob["target_gstar"], "problem.target_gstar")
    elif kind == "synth-logistic":
        prob["num_classes"] = _as_int(prob["num_classes"], "problem.num_classes")
        prob["l2"] = _as_float(prob["l2"], "problem.l2")
        prob["spread"] = _as_float(prob["spread"], "problem.spread")
        prob["label_skew"] = _as_float(prob["label_skew"], "problem.label_skew")
        prob["n_per_machine"] = _as_int(prob["n_per_machine"], "problem.n_per_machine")
    else:
        if prob["data_dir"] is not None:
            prob["data_dir"] = _as_str(prob["data_dir"], "problem.data_dir")
        prob["l2"] = _as_float(prob["l2"], "problem.l2")
        prob["label_skew"] = _as_float(prob["label_skew"], "problem.label_skew")
        if prob["train_limit"] is not None:
            prob["train_limit"] = _as_int(prob["train_limit"], "problem.train_limit")
    return prob


def spec_from_dict(raw: dict) -> ExperimentSpec:
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be an object, got {type(raw).__name__}")
    unknown = set(raw) - _SPEC_KEYS
    if unknown:
        raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
    for required in ("problem", "algorithm", "machines", "local_steps", "seeds"):
        if required not in raw:
            raise ConfigError(f"missing required config field {required!r}")

    algorithms = _as_str_tuple(raw["algorithm"], "algorithm")
    for algorithm in algorithms:
        if algorithm not in ALGORITHMS:
            raise ConfigError(
                f"field 'algorithm': unknown algorithm {algorithm!r}, "
                f"expected one of {sorted(ALGORITHMS)}"
            )
    schedule = _as_str(raw.get("schedule", "linear"), "schedule")
    try:
        parse_schedule(schedule)
    except ValueError as exc:
        raise ConfigError(f"field 'schedule': {exc}") from exc

    rounds = raw.get("rounds")
    total_steps = raw.get("total_steps")
    if (rounds is None) == (total_steps is None):
        raise ConfigError("exactly one of 'rounds' and 'total_steps' must be set")
    local_steps = _as_int_tuple(raw["local_steps"], "local_steps", 1)
    if rounds is not None:
        rounds = _as_int(rounds, "rounds")
        if rounds < 1:
            raise ConfigError(f"field 'rounds' must be >= 1, got {rounds}")
    else:
        total_steps = _as_int(total_steps, "total_steps")
        for k in local_steps:
            if total_steps % k != 0 or total_steps // k < 1:
                raise ConfigError(
                    f"field 'total_steps' ({total_steps}) must be a positive multiple "
                    f"of every local_steps entry (offender: {k})"
                )

    x0 = _as_str(raw.get("x0", "zeros"), "x0")
    if x0 != "zeros" and not x0.startswith("ones:"):
        raise ConfigError(f"field 'x0' must be 'zeros' or 'ones:<norm>', got {x0!r}")
    if x0.startswith("ones:"):
        try:
            float(x0[len("ones:"):])
        except ValueError as exc:
            raise ConfigError(f"field 'x0': bad norm in {x0!r}") from exc

    diagnostics = raw.get("diagnostics", False)
    if not isinstance(diagnostics, bool):
        raise ConfigError(f"field 'diagnostics' must be a boolean, got {diagnostics!r}")

    spec = ExperimentSpec(
        name=_as_str(raw.get("name", "experiment"), "name"),
        problem=_resolve_problem(raw["problem"]),
        algorithms=algorithms,
        schedule=schedule,
        machines=_as_int_tuple(raw["machines"], "machines", 1),
        local_steps=local_steps,
        rounds=rounds,
        total_steps=total_steps,
        lr=_validate_lr(raw.get("lr", "theory"), algorithms),
        seeds=_as_int_tuple(raw["seeds"], "seeds", 0),
        diagnostics=diagnostics,
        x0=x0,
        out_dir=_as_str(raw.get("out_dir", "runs"), "out_dir"),
    )
    return spec


def load_spec(path: str | Path) -> ExperimentSpec:
    """Parse a JSON config file into a fully-resolved ExperimentSpec."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return spec_from_dict(raw)


# ------------------------------------------------------------ experiment

def build_problem(problem: dict, num_machines: int):
    """Construct the ensemble a spec's problem block describes, for one
    machine count. MNIST problems go through mnist_experiment instead
    (they need the data directory and a reference optimum)."""
    kind = problem["kind"]
    if kind == "quadratic":
        return heterogeneous_quadratic(
            num_machines,
            problem["dim"],
            curvature=problem["curvature"],
            eig_range=tuple(problem["eig_range"]),
            center_spread=problem["center_spread"],
            sigma=problem["sigma"],
            target_gstar=problem["target_gstar"],
            seed=problem["problem_seed"],
        )
    if kind == "synth-logistic":
        datasets = synth_clusters(
            num_machines,
            problem["dim"],
            problem["num_classes"],
            problem["spread"],
            problem["label_skew"],
            problem["problem_seed"],
            n_per_machine=problem["n_per_machine"],
        )
        return LogisticEnsemble.from_datasets(
            datasets, problem["num_classes"], l2=problem["l2"]
        )
    raise ConfigError(f"cannot build problem kind {kind!r} here; use mnist_experiment")


def _resolve_start(x0: str, dim: int) -> np.ndarray | None:
    if x0 == "zeros":
        return None
    norm = float(x0[len("ones:"):])
    return norm * np.ones(dim) / math.sqrt(dim)


def _rounds_for(spec: ExperimentSpec, k: int) -> int:
    return spec.rounds if spec.rounds is not None else spec.total_steps // k


def _cfg_machines(algorithm: str, m: int) -> int:
    # the single-worker method batches over the whole ensemble itself
    return 1 if algorithm == "anytime" else m


def _lr_directive(spec: ExperimentSpec, algorithm: str) -> str:
    return spec.lr[algorithm] if isinstance(spec.lr, dict) else spec.lr


def _resolve_eta(problem, spec: ExperimentSpec, algorithm: str, m: int, k: int,
                 r_rounds: int, warnings: list[str]) -> float:
    mode, payload = _parse_lr_string(_lr_directive(spec, algorithm), "lr")
    if mode == "fixed":
        return payload
    start = _resolve_start(spec.x0, problem.dim)
    if mode == "theory":
        if spec.schedule != "linear":
            note = (f"theory step size assumes linear weights; "
                    f"schedule {spec.schedule!r} requested")
            if note not in warnings:
                warnings.append(note)
                print(f"warning: {note}", file=sys.stderr)
        md = problem.metadata(start if start is not None else np.zeros(problem.dim))
        return theoretical_lr(LrInputs(
            smoothness=md.smoothness, sigma=md.sigma, gstar=md.gstar,
            b0=md.b0, M=m, K=k, R=r_rounds,
        ))
    template = RunConfig(M=_cfg_machines(algorithm, m), K=k, R=r_rounds, eta=1.0,
                         schedule=parse_schedule(spec.schedule), seed=0, x0=start)
    best, _ = grid_search(problem, algorithm, payload, template, spec.seeds)
    return best


def _trajectory_rows(traj, run_id: str, problem_name: str, m: int, k: int,
                     r_rounds: int, seed: int, eta: float, wall_ms: float) -> list[dict]:
    rows = []
    for rm in traj.rounds:
        rows.append({
            "run_id": run_id,
            "algorithm": traj.algorithm,
            "problem": problem_name,
            "M": m,
            "K": k,
            "R": r_rounds,
            "seed": seed,
            "round": rm.round,
            "t": rm.t,
            "eta": float(eta),
            "excess_loss": float(rm.excess_loss),
            "grad_norm": float(rm.grad_norm),
            "dispersion_q": float(rm.dispersion_q),
            "v_increment": float(rm.v_increment),
            "d_t": float(rm.d_t),
            "diverged": "true" if rm.diverged else "false",
            "wall_ms": float(wall_ms),
        })
    return rows


def _run_one(problem, spec: ExperimentSpec, algorithm: str, m: int, k: int,
             r_rounds: int, eta: float, seed: int) -> tuple[list[dict], bool]:
    cfg = RunConfig(
        M=_cfg_machines(algorithm, m), K=k, R=r_rounds, eta=eta,
        schedule=parse_schedule(spec.schedule), seed=seed,
        record_diagnostics=spec.diagnostics,
        x0=_resolve_start(spec.x0, problem.dim),
    )
    started = time.perf_counter()
    traj = ALGORITHMS[algorithm](problem, cfg)
    wall_ms = (time.perf_counter() - started) * 1e3
    kind = spec.problem["kind"]
    run_id = f"{algorithm}-{kind}-M{m}-K{k}-s{seed}"
    return _trajectory_rows(traj, run_id, kind, m, k, r_rounds, seed, eta, wall_ms), traj.diverged


def _cell_worker(spec_payload: dict, algorithm: str, m: int, k: int,
                 r_rounds: int, eta: float) -> tuple[list[dict], bool]:
    """Process-pool task: one (algorithm, M, K) cell, all seeds.
    Rebuilds the problem from the spec payload so nothing heavyweight
    crosses the process boundary."""
    spec = ExperimentSpec(**spec_payload)
    problem = build_problem(spec.problem, m)
    rows: list[dict] = []
    any_diverged = False
    for seed in spec.seeds:
        seed_rows, diverged = _run_one(problem, spec, algorithm, m, k, r_rounds, eta, seed)
        rows.extend(seed_rows)
        any_diverged = any_diverged or diverged
    return rows, any_diverged


def _env_jobs() -> int:
    raw = os.environ.get(JOBS_ENV)
    if raw is None:
        return 1
    try:
        jobs = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{JOBS_ENV} must be an integer, got {raw!r}") from exc
    if jobs < 1:
        raise ConfigError(f"{JOBS_ENV} must be >= 1, got {jobs}")
    return jobs


def _resolve_out_dir(spec: ExperimentSpec, override: str | Path | None) -> Path:
    if override is not None:
        return Path(override)
    env = os.environ.get(OUT_ENV)
    return Path(env) if env else Path(spec.out_dir)


def _sort_rows(rows: list[dict]) -> list[dict]:
    return sorted(rows, key=lambda row: (row["algorithm"], row["M"], row["K"],
                                         row["seed"], row["round"]))


def _write_outputs(out_dir: Path, spec: ExperimentSpec, rows: list[dict],
                   manifest_extra: dict) -> tuple[Path, Path]:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "runs.csv"
        with csv_path.open("w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
        manifest = {
            "spec": dataclasses.asdict(spec),
            "csv_columns": CSV_COLUMNS,
            "created_utc": datetime.now(timezone.utc).isoformat(),
            **manifest_extra,
        }
        manifest_path = out_dir / "manifest.json"
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write output directory {out_dir}: {exc}") from exc
    return csv_path, manifest_path


def _problem_scalars(problem, spec: ExperimentSpec) -> dict:
    start = _resolve_start(spec.x0, problem.dim)
    md = problem.metadata(start if start is not None else np.zeros(problem.dim))
    return {
        "smoothness": md.smoothness, "sigma": md.sigma, "gstar": md.gstar,
        "f_star": md.f_star, "b0": md.b0,
    }


def run_experiment(spec: ExperimentSpec, out_dir: str | Path | None = None) -> RunSummary:
    """Execute every (algorithm, machines, local_steps, seed) combination of
    the spec and persist runs.csv + manifest.json. Synthetic problems only;
    MNIST goes through mnist_experiment."""
    if spec.problem["kind"] == "mnist-logistic":
        raise ConfigError("mnist-logistic specs must run through mnist_experiment / the "
                          "'mnist' subcommand")
    warnings: list[str] = []
    problems = {m: build_problem(spec.problem, m) for m in spec.machines}

    cells = []
    resolved_lr: dict[str, float] = {}
    for algorithm in spec.algorithms:
        for m in spec.machines:
            for k in spec.local_steps:
                r_rounds = _rounds_for(spec, k)
                eta = _resolve_eta(problems[m], spec, algorithm, m, k, r_rounds, warnings)
                resolved_lr[f"{algorithm}-M{m}-K{k}"] = eta
                cells.append((algorithm, m, k, r_rounds, eta))

    rows: list[dict] = []
    any_diverged = False
    jobs = _env_jobs()
    if jobs > 1 and len(cells) > 1:
        payload = dataclasses.asdict(spec)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_cell_worker, payload, *cell) for cell in cells]
            for future in futures:
                cell_rows, cell_diverged = future.result()
                rows.extend(cell_rows)
                any_diverged = any_diverged or cell_diverged
    else:
        for algorithm, m, k, r_rounds, eta in cells:
            for seed in spec.seeds:
                seed_rows, diverged = _run_one(
                    problems[m], spec, algorithm, m, k, r_rounds, eta, seed)
                rows.extend(seed_rows)
                any_diverged = any_diverged or diverged

    rows = _sort_rows(rows)
    extra = {
        "resolved_lr": resolved_lr,
        "problem_metadata": {f"M{m}": _problem_scalars(problems[m], spec)
                             for m in spec.machines},
        "package_version": _package_version(),
        "warnings": warnings,
    }
    resolved = _resolve_out_dir(spec, out_dir)
    csv_path, manifest_path = _write_outputs(resolved, spec, rows, extra)
    return RunSummary(resolved, csv_path, manifest_path, len(cells) * len(spec.seeds),
                      any_diverged)


def sweep(spec: ExperimentSpec, out_dir: str | Path | None = None) -> RunSummary:
    """Cartesian sweep; same engine as run_experiment, which already expands
    the algorithm x machines x local_steps x seeds product."""
    if not (spec.algorithms and spec.machines and spec.local_steps and spec.seeds):
        raise ConfigError("sweep needs nonempty algorithm/machines/local_steps/seeds lists")
    return run_experiment(spec, out_dir)


def _package_version() -> str:
    try:
        from importlib.metadata import version
        return version("slowcal-lab")
    except Exception:
        return "unknown"


# ----------------------------------------------------------------- MNIST

def _softmax_test_metrics(w_flat: np.ndarray, num_classes: int,
                          feats: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    mat = np.asarray(w_flat).reshape(num_classes, -1)
    logits = feats @ mat.T
    peak = logits.max(axis=1, keepdims=True)
    logp = logits - (peak + np.log(np.exp(logits - peak).sum(axis=1, keepdims=True)))
    ce = -float(logp[np.arange(feats.shape[0]), labels].mean())
    acc = float((logits.argmax(axis=1) == labels).mean())
    return acc, ce


def _lbfgs_reference(ensemble: LogisticEnsemble) -> tuple[np.ndarray, float]:
    """Near-optimal point for reference-based excess curves on corpora too
    large for the exact gradient-descent optimum oracle."""
    try:
        from scipy.optimize import minimize
    except ImportError as exc:
        raise ConfigError(
            "mnist experiments need scipy for the reference optimum; "
            "install the [mnist] extra"
        ) from exc

    def value_and_grad(w: np.ndarray) -> tuple[float, np.ndarray]:
        return ensemble.global_value(w), ensemble.global_gradient(w)

    result = minimize(value_and_grad, np.zeros(ensemble.dim), jac=True,
                      method="L-BFGS-B", options={"maxiter": 1000, "gtol": 1e-8})
    grad_norm = float(np.linalg.norm(ensemble.global_gradient(result.x)))
    return np.asarray(result.x, dtype=np.float64), grad_norm


def mnist_experiment(spec: ExperimentSpec, data_dir: str | Path | None = None,
                     out_dir: str | Path | None = None) -> RunSummary:
    """MNIST softmax-regression pipeline: Dirichlet label-skew partition,
    L-BFGS reference optimum for the excess-loss column, the same CSV
    contract as synthetic runs, and per-run test accuracy/loss in the
    manifest. Always serial."""
    prob = spec.problem
    if prob["kind"] != "mnist-logistic":
        raise ConfigError(f"mnist_experiment needs problem kind 'mnist-logistic', "
                          f"got {prob['kind']!r}")
    root = data_dir if data_dir is not None else prob["data_dir"]
    if root is None:
        raise ConfigError("no MNIST directory: set problem.data_dir or pass --data")
    try:
        train_x, train_y, test_x, test_y = load_mnist(root)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    limit = prob["train_limit"]
    if limit is not None:
        train_x, train_y = train_x[:limit], train_y[:limit]

    num_classes = 10
    warnings: list[str] = []
    problems: dict[int, LogisticEnsemble] = {}
    reference_info: dict[str, dict] = {}
    for m in spec.machines:
        part = dirichlet_partition(train_y, m, prob["label_skew"], prob["problem_seed"])
        datasets = [LabeledDataset(train_x[idx], train_y[idx])
                    for idx in part.machine_indices]
        bare = LogisticEnsemble.from_datasets(datasets, num_classes, l2=prob["l2"])
        reference, grad_norm = _lbfgs_reference(bare)
        problems[m] = LogisticEnsemble.from_datasets(
            datasets, num_classes, l2=prob["l2"], reference_point=reference)
        reference_info[f"M{m}"] = {
            "grad_norm": grad_norm,
            "train_loss": problems[m].f_star,
            "machine_sizes": part.sizes(),
        }

    rows: list[dict] = []
    any_diverged = False
    resolved_lr: dict[str, float] = {}
    test_metrics: dict[str, dict] = {}
    for algorithm in spec.algorithms:
        for m in spec.machines:
            problem = problems[m]
            for k in spec.local_steps:
                r_rounds = _rounds_for(spec, k)
                eta = _resolve_eta(problem, spec, algorithm, m, k, r_rounds, warnings)
                resolved_lr[f"{algorithm}-M{m}-K{k}"] = eta
                for seed in spec.seeds:
                    cfg = RunConfig(
                        M=_cfg_machines(algorithm, m), K=k, R=r_rounds, eta=eta,
                        schedule=parse_schedule(spec.schedule), seed=seed,
                        record_diagnostics=spec.diagnostics,
                        x0=_resolve_start(spec.x0, problem.dim),
                    )
                    started = time.perf_counter()
                    traj = ALGORITHMS[algorithm](problem, cfg)
                    wall_ms = (time.perf_counter() - started) * 1e3
                    run_id = f"{algorithm}-mnist-logistic-M{m}-K{k}-s{seed}"
                    rows.extend(_trajectory_rows(
                        traj, run_id, "mnist-logistic", m, k, r_rounds, seed, eta, wall_ms))
                    any_diverged = any_diverged or traj.diverged
                    acc, ce = _softmax_test_metrics(traj.x_output, num_classes,
                                                    test_x, test_y)
                    test_metrics[run_id] = {"test_accuracy": acc, "test_loss": ce}

    rows = _sort_rows(rows)
    extra = {
        "resolved_lr": resolved_lr,
        "reference": reference_info,
        "test_metrics": test_metrics,
        "package_version": _package_version(),
        "warnings": warnings,
    }
    resolved = _resolve_out_dir(spec, out_dir)
    csv_path, manifest_path = _write_outputs(resolved, spec, rows, extra)
    return RunSummary(resolved, csv_path, manifest_path, len(test_metrics), any_diverged)
