"""Doubly-robust estimation of treatment-specific survival curves."""

from .data import ColumnSpec, Dataset, FoldAssignment, TimeGrid, event_grid, load_csv, make_folds
from .estimator import (CurveEstimate, NuisanceBundle, NuisanceConfig, estimate_both_arms,
                        estimate_curve, fit_nuisances, monotone_project, one_step_curve,
                        variance_covariance)
from .inference import (ContrastEstimate, EqualityTestResult, PointwiseCI, UniformBand,
                        contrast, default_band_interval, equality_test, pointwise_ci,
                        pointwise_ci_curve, rmst, rmst_difference, simulate_gp_sup,
                        uniform_band)

__version__ = "0.1.0"

__all__ = [
    "ColumnSpec", "Dataset", "FoldAssignment", "TimeGrid", "event_grid", "load_csv",
    "make_folds", "CurveEstimate", "NuisanceBundle", "NuisanceConfig",
    "estimate_both_arms", "estimate_curve", "fit_nuisances", "monotone_project",
    "one_step_curve", "variance_covariance", "ContrastEstimate", "EqualityTestResult",
    "PointwiseCI", "UniformBand", "contrast", "default_band_interval", "equality_test",
    "pointwise_ci", "pointwise_ci_curve", "rmst", "rmst_difference", "simulate_gp_sup",
    "uniform_band", "__version__",
]
