"""Generalized Akaike model selection for penalized fits.

The effective number of parameters m_eff of a fit is estimated by
bootstrap refits of resampled data and combined with the goodness of fit
into ``AIC_p = chi^2 + 2 m_eff``. Gauss-Hermite series (order selection)
and penalized per-point models (smoothing selection) are supported, with
closed-form checks for linear models in :mod:`aicp.oracle`.
"""

__version__ = "0.1.0"

from .bootstrap import (
    BootstrapPlan,
    BootstrapSummary,
    derivative_scatter,
    run_bootstrap,
    scatter_bienayme,
)
from .data import (
    TABLE1_MODEL,
    DataFormatError,
    DataSet,
    GeneratingModel,
    MockConfig,
    eval_generating,
    generate_mock,
    load_dataset,
    save_dataset,
)
from .experiments import ExperimentConfig, run_figure_suite
from .models import ModelSpec, model_jacobian, model_values, penalty
from .oracle import OracleReport, analytic_meff, validate_bootstrap
from .selection import (
    DEFAULT_ALPHA_GRID,
    SelectionTable,
    aicp,
    scan_alpha,
    scan_parametric,
)
from .solver import FitError, FitResult, fit

__all__ = [
    "BootstrapPlan",
    "BootstrapSummary",
    "DEFAULT_ALPHA_GRID",
    "DataFormatError",
    "DataSet",
    "ExperimentConfig",
    "FitError",
    "FitResult",
    "GeneratingModel",
    "MockConfig",
    "ModelSpec",
    "OracleReport",
    "SelectionTable",
    "TABLE1_MODEL",
    "aicp",
    "analytic_meff",
    "derivative_scatter",
    "eval_generating",
    "fit",
    "generate_mock",
    "load_dataset",
    "model_jacobian",
    "model_values",
    "penalty",
    "run_bootstrap",
    "run_figure_suite",
    "save_dataset",
    "scan_alpha",
    "scan_parametric",
    "scatter_bienayme",
    "validate_bootstrap",
]
