"""Nuisance-model fitting: GLMs, asymptotic MLE corrections and corrected links."""

from hdate.nuisance.corrections import (
    inverse_control_propensity_corrected,
    inverse_propensity_corrected,
    loo_linear_predictors,
    platt_rescale,
    platt_rescale_loo,
    platt_scale_factor,
    predict,
    sigma_x2_estimate,
    sloe_correct,
    sloe_from_signal,
)
from hdate.nuisance.glm import (
    Correction,
    FitMeta,
    GlmFit,
    fit_logistic_mle,
    fit_ols,
    ols,
    require_converged,
)
from hdate.nuisance.links import corrected_link, sigmoid_derivative
from hdate.nuisance.surcandes import (
    SloeParameters,
    solve_from_corrupted_strength,
    solve_sur_candes_system,
)

__all__ = [
    "Correction",
    "FitMeta",
    "GlmFit",
    "SloeParameters",
    "corrected_link",
    "fit_logistic_mle",
    "fit_ols",
    "inverse_control_propensity_corrected",
    "inverse_propensity_corrected",
    "loo_linear_predictors",
    "ols",
    "platt_rescale",
    "platt_rescale_loo",
    "platt_scale_factor",
    "predict",
    "require_converged",
    "sigma_x2_estimate",
    "sigmoid_derivative",
    "sloe_correct",
    "sloe_from_signal",
    "solve_from_corrupted_strength",
    "solve_sur_candes_system",
]
