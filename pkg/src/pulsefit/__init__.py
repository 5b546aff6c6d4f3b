"""Impulsive time-series estimation.

Recovers the elimination rates, basal level, and a sparse train of
instantaneous impulses of a linear time-invariant system from sampled
output measurements, with robust-regression and basal-level extensions and
a reproducible synthetic benchmark harness.
"""

__version__ = "0.1.0"

from .model import (
    FirstOrderModel,
    ImpulseTrain,
    MergeSelection,
    SamplingGrid,
    SecondOrderModel,
    TimeSeries,
    apply_merges,
    merge_adjacent,
    merge_pair,
    regressor_first_order,
    regressor_second_order,
    second_order_kernel,
    select_merges,
    simulate,
)
from .onestep import (
    BasalCell,
    BasalCurve,
    BasalEstimate,
    DegenerateScanError,
    GammaCurve,
    GammaPoint,
    KnownTimesFit,
    OneStepEstimate,
    OutlyingProfile,
    ResidualScan,
    ScanConfig,
    bic_score,
    concentrated_residual,
    count_impulses,
    default_eps_reg,
    detect_outlying_profile,
    estimate_basal,
    estimate_first_order,
    fit_known_times,
    gamma_curve,
    newton_from_values,
    scan_newton_quotient,
    select_by_bic,
)
from .solvers import (
    NnlsSolution,
    RobustWeights,
    kkt_tolerance,
    kkt_violation,
    solve_nnls,
    solve_robust_nnls,
    solve_weighted_nnls,
)

__all__ = [
    "__version__",
    "FirstOrderModel",
    "ImpulseTrain",
    "MergeSelection",
    "SamplingGrid",
    "SecondOrderModel",
    "TimeSeries",
    "apply_merges",
    "merge_adjacent",
    "merge_pair",
    "regressor_first_order",
    "regressor_second_order",
    "second_order_kernel",
    "select_merges",
    "simulate",
    "BasalCell",
    "BasalCurve",
    "BasalEstimate",
    "DegenerateScanError",
    "GammaCurve",
    "GammaPoint",
    "KnownTimesFit",
    "OneStepEstimate",
    "OutlyingProfile",
    "ResidualScan",
    "ScanConfig",
    "bic_score",
    "concentrated_residual",
    "count_impulses",
    "default_eps_reg",
    "detect_outlying_profile",
    "estimate_basal",
    "estimate_first_order",
    "fit_known_times",
    "gamma_curve",
    "newton_from_values",
    "scan_newton_quotient",
    "select_by_bic",
    "NnlsSolution",
    "RobustWeights",
    "kkt_tolerance",
    "kkt_violation",
    "solve_nnls",
    "solve_robust_nnls",
    "solve_weighted_nnls",
]
