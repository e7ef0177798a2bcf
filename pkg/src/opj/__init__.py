"""Out-of-bag post-stratified jackknife (OPJ) treatment-effect estimation."""

from .core import Estimand, EstimateReport, ExperimentData, Method, g_apply, read_experiment_csv, validate
from .estimator import (
    BaselineEstimator,
    ControlArmPSF,
    ImputationEstimator,
    OPJEstimator,
    PostStratifier,
    check_experiment,
)
from .estimators import (
    baseline_estimate,
    baseline_se,
    imputation_estimate,
    post_stratified_estimate,
    strata_summary,
    variance_decomposition,
)
from .exceptions import EstimationError, InputError, OPJError
from .jackknife import (
    JackknifeConfig,
    baseline_report,
    confidence_interval,
    imputation_jackknife,
    jackknife_se,
    opj_run,
    partition_buckets,
)
from .regression import LinearModel, fit_arm_models, fit_control_model, fit_ols, predict
from .stratify import (
    StrataBoundaries,
    assign,
    class_boundaries,
    kde_fit,
    quantile_boundaries,
    root_cum_boundaries,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineEstimator",
    "ControlArmPSF",
    "Estimand",
    "EstimateReport",
    "EstimationError",
    "ExperimentData",
    "ImputationEstimator",
    "InputError",
    "JackknifeConfig",
    "LinearModel",
    "Method",
    "OPJError",
    "OPJEstimator",
    "PostStratifier",
    "StrataBoundaries",
    "assign",
    "baseline_estimate",
    "baseline_report",
    "baseline_se",
    "check_experiment",
    "class_boundaries",
    "confidence_interval",
    "fit_arm_models",
    "fit_control_model",
    "fit_ols",
    "g_apply",
    "imputation_estimate",
    "imputation_jackknife",
    "jackknife_se",
    "kde_fit",
    "opj_run",
    "partition_buckets",
    "post_stratified_estimate",
    "predict",
    "quantile_boundaries",
    "read_experiment_csv",
    "root_cum_boundaries",
    "strata_summary",
    "validate",
    "variance_decomposition",
]
