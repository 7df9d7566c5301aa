"""Bias-aware Bayesian calibration: no-bias inference, modularized
Kennedy-O'Hagan calibration and orthogonal-GP calibration with
noise-aware bias kernels and bias-input-domain extension."""

__version__ = "0.1.0"

from .calibration import (
    CalibrationConfig,
    CalibrationResult,
    InputScaler,
    PredictiveBand,
    bias_corrected_response,
    calibrate,
    fitted_response,
    residuals,
)
from .diagnostics import PosteriorSummary, gelman_rubin, hdi, mcse, summarize
from .errors import (
    BiascalError,
    ConfigError,
    DimensionMismatchError,
    FactorizationError,
    ModelEvaluationError,
)
from .gp import BiasModel, FittedGP, fit_map, log_marginal_likelihood, predict
from .inference import (
    Chain,
    LogNormalPrior,
    NormalPrior,
    UniformPrior,
    log_likelihood_biased,
    log_likelihood_nobias,
    log_prior,
    map_estimate,
    metropolis_hastings,
)
from .kernels import (
    Constant,
    GramMatrix,
    Heteroscedastic,
    Hyper,
    Matern32,
    Product,
    RBF,
    Sum,
    WhiteNoise,
    eval_kernel,
    gram,
)
from .models import Dataset, l2_optimum, mse_optimum
from .ogp import SensitivityMatrix, model_gradient_fd, orthogonal_gram

__all__ = [name for name in dir() if not name.startswith("_")]
