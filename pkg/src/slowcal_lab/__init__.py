"""slowcal-lab: a parameter-server laboratory for distributed stochastic
convex optimization.

Implements drift-corrected local SGD (per-machine query-point averaging with
increasing step weights) next to minibatch SGD and local SGD baselines, with
exactly reproducible seeded runs, self-checking algebraic identities, and a
CSV/manifest experiment harness.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .algorithms import (
    ALGORITHMS,
    RunConfig,
    ServerAnchor,
    StepRecord,
    Trajectory,
    WorkerState,
    run_anytime_single,
    run_local,
    run_local_weighted,
    run_minibatch,
    run_slowcal,
)
from .data import (
    IdxFormatError,
    LabeledDataset,
    Partition,
    dirichlet_partition,
    load_mnist,
    parse_idx_images,
    parse_idx_labels,
    serialize_idx_images,
    serialize_idx_labels,
    synth_clusters,
)
from .metrics import RoundMetrics, bias_increment, dispersion, excess_loss, momentum_residual
from .objectives import (
    DegenerateProblemError,
    LogisticEnsemble,
    ProblemMetadata,
    QuadraticEnsemble,
    heterogeneous_quadratic,
)
from .runner import (
    ConfigError,
    ExperimentSpec,
    RunSummary,
    build_problem,
    load_spec,
    mnist_experiment,
    run_experiment,
    spec_from_dict,
    sweep,
)
from .tuning import GridSearchError, LrInputs, grid_search, rmin, theoretical_lr
from .verify import CheckResult, VerifyReport, verify_suite
from .weights import (
    LINEAR,
    UNIFORM,
    WeightSchedule,
    averaging_coeff,
    parse_schedule,
    prefix_weight,
    schedule_name,
    weight_at,
)

__all__ = [
    "ALGORITHMS",
    "CheckResult",
    "ConfigError",
    "DegenerateProblemError",
    "ExperimentSpec",
    "GridSearchError",
    "IdxFormatError",
    "LINEAR",
    "LabeledDataset",
    "LogisticEnsemble",
    "LrInputs",
    "Partition",
    "ProblemMetadata",
    "QuadraticEnsemble",
    "RoundMetrics",
    "RunConfig",
    "RunSummary",
    "ServerAnchor",
    "StepRecord",
    "Trajectory",
    "UNIFORM",
    "VerifyReport",
    "WeightSchedule",
    "WorkerState",
    "__version__",
    "averaging_coeff",
    "bias_increment",
    "build_problem",
    "dirichlet_partition",
    "dispersion",
    "excess_loss",
    "grid_search",
    "heterogeneous_quadratic",
    "load_mnist",
    "load_spec",
    "mnist_experiment",
    "momentum_residual",
    "parse_idx_images",
    "parse_idx_labels",
    "parse_schedule",
    "prefix_weight",
    "rmin",
    "run_anytime_single",
    "run_experiment",
    "run_local",
    "run_local_weighted",
    "run_minibatch",
    "run_slowcal",
    "schedule_name",
    "serialize_idx_images",
    "serialize_idx_labels",
    "spec_from_dict",
    "sweep",
    "synth_clusters",
    "theoretical_lr",
    "verify_suite",
    "weight_at",
]
