"""Instrumental-variables, matching and selection-model toolkit."""

from .data import ColumnMeta, Dataset, SummaryTable, Transform, derive_columns, group_describe, load_csv
from .diagnostics import (
    TestResult, dwh_endogeneity_test, first_stage_f, lr_test, overid_test, significance_stars,
)
from .errors import (
    ConvergenceError, DataError, DomainViolation, IVKitError, NumericalError, RankError,
    SeparationError, SpecError,
)
from .estimators import (
    FitResult, ModelSpec, absorb_fixed_effects, fit_gmm, fit_iv, fit_liml, fit_ols, fit_tsls,
    robust_covariance,
)
from .matching import (
    BalanceTable, Kernel, MatchResult, NearestNeighbor, PropensityModel, Radius, SupportReport,
    balance_table, common_support, estimate_propensity, match_att,
)
from .selection import HeckmanResult, fit_probit, heckman_two_step, inverse_mills
from .simulate import DGPConfig, SelectionLayer, TruthRecord, generate, replicate

__all__ = [
    "absorb_fixed_effects", "balance_table", "BalanceTable", "ColumnMeta", "common_support",
    "ConvergenceError", "DataError", "Dataset", "derive_columns", "DGPConfig", "DomainViolation",
    "dwh_endogeneity_test", "estimate_propensity", "first_stage_f", "fit_gmm", "fit_iv",
    "fit_liml", "fit_ols", "fit_probit", "fit_tsls", "FitResult", "generate", "group_describe",
    "heckman_two_step", "HeckmanResult", "inverse_mills", "IVKitError", "Kernel", "load_csv",
    "lr_test", "match_att", "MatchResult", "ModelSpec", "NearestNeighbor", "NumericalError",
    "overid_test", "PropensityModel", "Radius", "RankError", "replicate", "robust_covariance",
    "SelectionLayer", "SeparationError", "significance_stars", "SpecError", "SummaryTable",
    "SupportReport", "TestResult", "Transform", "TruthRecord",
]

__version__ = "0.1.0"
