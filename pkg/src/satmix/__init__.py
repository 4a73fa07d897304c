"""Intervals for sample average treatment effects under randomization.

The difference in means can be read as an estimator of the effect on all units
(SATE), on the treated (SATT), on the controls (SATC), or on any weighted mix
of the last two. This package computes the variance of the difference in means
recentered at each of these targets, builds the corresponding confidence or
prediction intervals, certifies the closed forms by exhaustive enumeration and
runs Monte Carlo coverage studies.
"""

from .core_types import (
    CoverageRecord,
    CoverageReport,
    EstimandKind,
    EstimandSpec,
    ExperimentSummary,
    IntervalResult,
    ObservedExperiment,
    RhoAssumption,
    RhoKind,
    SamplingModel,
    ScienceMoments,
    ScienceTable,
    VarianceMode,
    science_moments,
    summarize,
)
from .errors import SatmixError
from .estimators import (
    bounded_rho_variance,
    combine_satt_satc,
    covariate_adjust,
    diff_in_means,
    empirical_rho_bound,
    interval,
    length_gain,
    mse_sate_satt,
    neyman_variance,
    optimal_omega,
    recentered_variance,
    resolve_omega,
    rho_one_variance,
    rho_threshold,
    sp_decomposition,
    variance_decomposition,
    variance_ratio_test,
)
from .bernoulli_design import bernoulli_satt_interval, bernoulli_satt_variance
from .randomization_oracle import exact_moments, verify_all, verify_formula
from .simulation_lab import DgpSpec, ReplicationPlan, generate, normality_diagnostic, run

__version__ = "0.1.0"

__all__ = [
    "CoverageRecord",
    "CoverageReport",
    "DgpSpec",
    "EstimandKind",
    "EstimandSpec",
    "ExperimentSummary",
    "IntervalResult",
    "ObservedExperiment",
    "ReplicationPlan",
    "RhoAssumption",
    "RhoKind",
    "SamplingModel",
    "SatmixError",
    "ScienceMoments",
    "ScienceTable",
    "VarianceMode",
    "bernoulli_satt_interval",
    "bernoulli_satt_variance",
    "bounded_rho_variance",
    "combine_satt_satc",
    "covariate_adjust",
    "diff_in_means",
    "empirical_rho_bound",
    "exact_moments",
    "generate",
    "interval",
    "length_gain",
    "mse_sate_satt",
    "neyman_variance",
    "normality_diagnostic",
    "optimal_omega",
    "recentered_variance",
    "resolve_omega",
    "rho_one_variance",
    "rho_threshold",
    "run",
    "science_moments",
    "sp_decomposition",
    "summarize",
    "variance_decomposition",
    "variance_ratio_test",
    "verify_all",
    "verify_formula",
]
