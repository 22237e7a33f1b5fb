"""Path-integral stochastic optimal control.

Monte Carlo estimation of exponentiated cost-to-go values for controlled
diffusions, importance-sampling diagnostics (normalized weights, effective
sample size, variance bounds), least-squares fitting of time-indexed
feedback controllers from weighted path statistics, and an iterative
importance-sampling loop that refines the sampling policy in place.  A
geometric-Brownian-motion benchmark with closed-form optimum exercises the
whole pipeline.
"""

from .sde import (AnalyticPolicy, BasisSet, ControlProblem, ParametrizedPolicy,
                  PathEnsemble, Policy, SimulationError, TimeGrid, ZeroPolicy,
                  replay, simulate)
from .cost import (CostRecord, DegenerateEnsembleError, WeightSet,
                   batch_standard_error, expected_cost, path_costs,
                   value_estimate, variance_bounds, weights)
from .estimator import (FitResult, MomentSeries, SingularFitError,
                        compute_moments, control_correction, fit_feedback,
                        weighted_average)
from .iis import IISConfig, IterationReport, evaluate_policy, run
from . import bench_gbm, cli

__version__ = "0.1.0"

__all__ = [
    "AnalyticPolicy", "BasisSet", "ControlProblem", "ParametrizedPolicy",
    "PathEnsemble", "Policy", "SimulationError", "TimeGrid", "ZeroPolicy",
    "replay", "simulate",
    "CostRecord", "DegenerateEnsembleError", "WeightSet",
    "batch_standard_error", "expected_cost", "path_costs", "value_estimate",
    "variance_bounds", "weights",
    "FitResult", "MomentSeries", "SingularFitError", "compute_moments",
    "control_correction", "fit_feedback", "weighted_average",
    "IISConfig", "IterationReport", "evaluate_policy", "run",
    "bench_gbm", "cli",
    "__version__",
]
