"""Adaptive-lag online marginal smoothing for state-space models."""

from .errors import (
    ActiveSetOverflowError,
    AdalagError,
    DegenerateBackwardWeightsError,
    DegenerateWeightsError,
    InvalidParameterError,
    NumericalError,
    RetentionError,
    WeightCollapseError,
)
from .kalman import (
    disturbance_smoother,
    ideal_adaptive_lag_run,
    kalman_filter,
)
from .models import (
    LgssmParams,
    ModelSpec,
    SvParams,
    Trajectory,
    benchmark_lgssm_params,
    benchmark_sv_params,
    make_lgssm,
    make_sv,
    simulate,
)
from .particle import (
    GenealogyStore,
    WeightedSample,
    filter_estimate,
    poor_mans_estimate,
    run_filter,
)
from .results import SmoothedMarginal
from .smoothers import (
    AdaptiveLagSmoother,
    EstimatorBank,
    adaptive_lag_run,
    criterion_trace,
    fixed_lag_run,
    fixed_lag_runs,
)

__version__ = "0.1.0"

__all__ = [
    "ActiveSetOverflowError",
    "AdalagError",
    "AdaptiveLagSmoother",
    "DegenerateBackwardWeightsError",
    "DegenerateWeightsError",
    "EstimatorBank",
    "GenealogyStore",
    "InvalidParameterError",
    "LgssmParams",
    "ModelSpec",
    "NumericalError",
    "RetentionError",
    "SmoothedMarginal",
    "SvParams",
    "Trajectory",
    "WeightCollapseError",
    "WeightedSample",
    "adaptive_lag_run",
    "benchmark_lgssm_params",
    "benchmark_sv_params",
    "criterion_trace",
    "disturbance_smoother",
    "filter_estimate",
    "fixed_lag_run",
    "fixed_lag_runs",
    "ideal_adaptive_lag_run",
    "kalman_filter",
    "make_lgssm",
    "make_sv",
    "poor_mans_estimate",
    "run_filter",
    "simulate",
]
