"""Robust Wasserstein profile inference: profile functions, limit laws, and
distributionally robust estimators with data-driven regularization."""

from .core import (
    ConfigError,
    CostSpec,
    DataFileError,
    Dataset,
    DegenerateColumnError,
    DimensionError,
    EmptyInputError,
    EstimatingEquation,
    InvalidExponentError,
    KindMismatchError,
    RngSeed,
    RWPIError,
    Standardizer,
    dual_exponent,
    linear_regression_equation,
    logistic_equation,
    lp_norm,
    mean_equation,
    read_csv,
    standardize,
    write_csv,
)
from .dro_worstcase import (
    WorstCase,
    worstcase_dual_numeric,
    worstcase_hinge_closed,
    worstcase_linear_closed,
    worstcase_logistic_closed,
)
from .limit_laws import (
    LimitSampleBatch,
    QuantileEstimate,
    UnboundedLawError,
    growth_C,
    lambda_highdim,
    quantile,
    sample_L1,
    sample_L2,
    sample_L4,
    sample_rbar,
    sample_rbar_one,
)
from .pipeline import (
    ExperimentConfig,
    ExperimentRow,
    RegularizationChoice,
    coverage_probability,
    generate_linear_data,
    run_experiment_csv,
    run_experiment_sim,
    select_lambda_linear,
    select_lambda_logistic,
)
from .rwp_profile import RwpValue, rwp_generic_dual, rwp_linear_q2, rwp_mean
from .solvers import FitResult, cross_validate_lambda, fit_logistic_lp, fit_ols, fit_sqrt_lasso

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CostSpec",
    "DataFileError",
    "Dataset",
    "DegenerateColumnError",
    "DimensionError",
    "EmptyInputError",
    "EstimatingEquation",
    "ExperimentConfig",
    "ExperimentRow",
    "FitResult",
    "InvalidExponentError",
    "KindMismatchError",
    "LimitSampleBatch",
    "QuantileEstimate",
    "RWPIError",
    "RegularizationChoice",
    "RngSeed",
    "RwpValue",
    "Standardizer",
    "UnboundedLawError",
    "WorstCase",
    "coverage_probability",
    "cross_validate_lambda",
    "dual_exponent",
    "fit_logistic_lp",
    "fit_ols",
    "fit_sqrt_lasso",
    "generate_linear_data",
    "growth_C",
    "lambda_highdim",
    "linear_regression_equation",
    "logistic_equation",
    "lp_norm",
    "mean_equation",
    "quantile",
    "read_csv",
    "run_experiment_csv",
    "run_experiment_sim",
    "rwp_generic_dual",
    "rwp_linear_q2",
    "rwp_mean",
    "sample_L1",
    "sample_L2",
    "sample_L4",
    "sample_rbar",
    "sample_rbar_one",
    "select_lambda_linear",
    "select_lambda_logistic",
    "standardize",
    "worstcase_dual_numeric",
    "worstcase_hinge_closed",
    "worstcase_linear_closed",
    "worstcase_logistic_closed",
    "write_csv",
]
