"""Doob-Meyer decomposition on finite filtered spaces over dyadic grids."""

from .doob import (
    DoobPair,
    NotSubmartingaleError,
    UIDiagnostics,
    UIRow,
    doob_decompose_discrete,
    extend_compensator_step,
    extend_martingale,
    normalize,
    tau_threshold,
    ui_diagnostics,
)
from .filtered_space import (
    DyadicGrid,
    FiniteFilteredSpace,
    NotStoppingTimeError,
    SpaceError,
    StoppingTime,
    conditional_expectation,
    evaluate_at_stopping_time,
    format_time,
    is_stopping_time,
    lp_norm,
)
from .instance import Instance, InstanceError, read_instance, write_instance
from .komlos import (
    ConvexWeights,
    ExtractionError,
    KomlosReport,
    SolverError,
    hilbert_komlos_step,
    komlos_extract,
    min_norm_convex_hull,
    truncate,
)
from .limit import (
    CombinedProcesses,
    ConvergenceCurve,
    WeightSupportError,
    build_combined,
    compensator_mean_at_tau,
    convergence_curve,
    predictability_check,
    round_up_time,
    sigma_round_up,
)
from .processes import (
    AdaptedProcess,
    GroundTruthPair,
    NotAdaptedError,
    binary_tree,
    class_d_sup,
    enumerate_stopping_times,
    gen_ground_truth,
    gen_squared_walk,
    hitting_time,
    is_submartingale,
    perturb_drift,
    random_space,
)

__all__ = [
    "AdaptedProcess",
    "CombinedProcesses",
    "ConvergenceCurve",
    "ConvexWeights",
    "DoobPair",
    "DyadicGrid",
    "ExtractionError",
    "FiniteFilteredSpace",
    "GroundTruthPair",
    "Instance",
    "InstanceError",
    "KomlosReport",
    "NotAdaptedError",
    "NotStoppingTimeError",
    "NotSubmartingaleError",
    "SolverError",
    "SpaceError",
    "StoppingTime",
    "UIDiagnostics",
    "UIRow",
    "WeightSupportError",
    "binary_tree",
    "build_combined",
    "class_d_sup",
    "compensator_mean_at_tau",
    "conditional_expectation",
    "convergence_curve",
    "doob_decompose_discrete",
    "enumerate_stopping_times",
    "evaluate_at_stopping_time",
    "extend_compensator_step",
    "extend_martingale",
    "format_time",
    "gen_ground_truth",
    "gen_squared_walk",
    "hilbert_komlos_step",
    "hitting_time",
    "is_stopping_time",
    "is_submartingale",
    "komlos_extract",
    "lp_norm",
    "min_norm_convex_hull",
    "normalize",
    "perturb_drift",
    "predictability_check",
    "random_space",
    "read_instance",
    "round_up_time",
    "sigma_round_up",
    "tau_threshold",
    "truncate",
    "ui_diagnostics",
    "write_instance",
]
