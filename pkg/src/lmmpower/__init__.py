"""Linear mixed models with crossed subjects and items: ML fitting, random-structure
selection and Monte Carlo Type I error / power experiments."""
from .design import (
    Dataset,
    DesignError,
    ExperimentDesign,
    ModelSpec,
    PRESETS,
    Structure,
    build_matrices,
    enumerate_structures,
    variance_param_count,
)
from .fitter import (
    CovarianceEstimates,
    FitResult,
    deviance_direct,
    fit_ml,
    profiled_deviance,
    theta_to_covariance,
)
from .inference import aic, chisq1_quantile, chisq1_sf, lrt, wilson_ci
from .kernel import BACKEND
from .selection import Criterion, SelectionConfig, select_aic, select_backward_lrt
from .simulate import GeneratingParams, SeedSpec, chol2x2, sample_random_effects, simulate_dataset

__version__ = "0.1.0"
