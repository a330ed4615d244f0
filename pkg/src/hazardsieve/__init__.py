"""Kernel-weighted sieve estimation for Box-Cox transformed hazards models
with sparse longitudinal covariates."""
from .data import DataError, Dataset, Measurement, Subject, load_dataset, validate, write_dataset
from .estimator import (
    BasisConfig,
    CVSpec,
    FitConfig,
    FitResult,
    NoWeightedEventsError,
    SingularInformationError,
    bic,
    cauchy_combine,
    cv_bandwidth,
    fit,
    wald,
)
from .kernel import EPANECHNIKOV, KernelSpec
from .likelihood import QuadratureRule, SieveParams, loglik, loglik_grad, loglik_oracle
from .simulate import SimConfig, calibrate_censoring, fit_lvcf, gen_dataset, run_study
from .spline import build_basis
from .transform import BoxCoxTransform

__version__ = "0.1.0"

__all__ = [
    "BasisConfig",
    "BoxCoxTransform",
    "CVSpec",
    "DataError",
    "Dataset",
    "EPANECHNIKOV",
    "FitConfig",
    "FitResult",
    "KernelSpec",
    "Measurement",
    "NoWeightedEventsError",
    "QuadratureRule",
    "SieveParams",
    "SimConfig",
    "SingularInformationError",
    "Subject",
    "bic",
    "build_basis",
    "calibrate_censoring",
    "cauchy_combine",
    "cv_bandwidth",
    "fit",
    "fit_lvcf",
    "gen_dataset",
    "load_dataset",
    "loglik",
    "loglik_grad",
    "loglik_oracle",
    "run_study",
    "validate",
    "wald",
    "write_dataset",
]
