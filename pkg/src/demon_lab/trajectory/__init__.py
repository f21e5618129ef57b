"""Trajectory-level quantities: unravelings, exact contraction, inverse process and sampling."""

from .contraction import (
    FTResult,
    enumerate_ft,
    extremes,
    ft_expectation,
    probability_factors,
    stochastic_averages,
    stochastic_terms,
    sweep,
)
from .enumerate import TrajectoryTable, enumerate_trajectories
from .inverse import (
    DetailedFTResult,
    InverseProcess,
    absolute_irreversibility,
    detailed_ft_check,
    inverse_process,
)
from .sampling import (
    ExperimentRecords,
    HybridResult,
    exhaustive_records,
    hybrid_estimate,
    p_exp_closed_form,
    sample_experiment,
)
from .unraveling import (
    StochasticRecord,
    TrajectoryLabel,
    UnravelingBases,
    build_bases,
    stochastic_quantities,
    trajectory_probability,
)

__all__ = [
    "DetailedFTResult", "ExperimentRecords", "FTResult", "HybridResult", "InverseProcess",
    "StochasticRecord", "TrajectoryLabel", "TrajectoryTable", "UnravelingBases",
    "absolute_irreversibility", "build_bases", "detailed_ft_check", "enumerate_ft",
    "enumerate_trajectories", "exhaustive_records", "extremes", "ft_expectation",
    "hybrid_estimate", "inverse_process", "p_exp_closed_form", "probability_factors",
    "sample_experiment", "stochastic_averages", "stochastic_quantities", "stochastic_terms",
    "sweep", "trajectory_probability",
]
