"""Post-hoc corrections of logistic fits: SLOE rescaling and Platt scaling.

Both rely on leave-one-out linear predictors, approximated by a single Newton
downdate from the converged full-data solution instead of n refits.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy.special import expit

from hdate.errors import ConfigError, LooDegeneracyError, NumericalError
from hdate.nuisance.glm import (
    Correction,
    GlmFit,
    _design,
    _select,
    fit_logistic_mle,
    require_converged,
)
from hdate.nuisance.links import corrected_link
from hdate.nuisance.surcandes import solve_from_corrupted_strength, solve_sur_candes_system


def _fit_design(fit: GlmFit, X, Y, rows):
    idx = _select(rows, np.asarray(X).shape[0])
    X = np.asarray(X, dtype=float)[idx]
    y = np.asarray(Y, dtype=float)[idx]
    A = _design(X, True)
    theta = np.concatenate([[fit.intercept], fit.coefficients])
    return A, y, theta


def loo_linear_predictors(fit: GlmFit, X, Y, rows=None):
    """One-step approximations of ``x_i @ theta_hat_{-i}`` and the leverages.

    Removing row i from the converged fit and taking one Newton step gives
    ``z_i + q_i (mu_i - y_i) / (1 - w_i q_i)`` with ``q_i = a_i' H^{-1} a_i``
    for the summed Hessian H.  The leverages ``w_i q_i`` must stay below 1.
    """
    if fit.family != "binomial":
        raise ConfigError("leave-one-out predictors need a binomial fit")
    A, y, theta = _fit_design(fit, X, Y, rows)
    z = A @ theta
    mu = expit(z)
    w = mu * (1.0 - mu)
    H = (A * w[:, None]).T @ A
    try:
        L = scipy.linalg.cholesky(H, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise LooDegeneracyError("Hessian is not positive definite") from None
    V = scipy.linalg.solve_triangular(L, A.T, lower=True, check_finite=False)
    q = np.einsum("ij,ij->j", V, V)
    lev = w * q
    # Leverage 1 up to rounding: the row is the only support of some direction.
    if np.any(lev >= 1.0 - 1e-10):
        raise LooDegeneracyError(f"downdated leverage reached {lev.max():.4f} >= 1")
    return z + q * (mu - y) / (1.0 - lev), lev


def sloe_correct(fit: GlmFit, X, Y, rows=None, correct_intercept: bool = True, z_loo=None) -> GlmFit:
    """Estimate the MLE inflation factor and attach it as a SLOE correction.

    The variance of the leave-one-out linear predictors estimates the
    corrupted signal strength ``alpha^2 gamma^2 + kappa sigma_star^2``, which
    pins down ``(alpha, sigma_star)`` through the asymptotic fixed point.
    ``z_loo`` may pass precomputed leave-one-out predictors.
    """
    require_converged(fit)
    if z_loo is None:
        z_loo, _ = loo_linear_predictors(fit, X, Y, rows)
    n_fit = z_loo.size
    kappa = fit.d / n_fit
    params = solve_from_corrupted_strength(kappa, float(np.var(z_loo, ddof=1)))
    return fit.with_correction(
        Correction("sloe", alpha=params.alpha, sigma_star=params.sigma_star, correct_intercept=correct_intercept)
    )


def sloe_from_signal(fit: GlmFit, gamma2: float, n_fit: int | None = None, correct_intercept: bool = True) -> GlmFit:
    """SLOE-style correction using the true signal strength (oracle alpha)."""
    n_fit = n_fit or fit.fit_meta.n_obs
    params = solve_sur_candes_system(fit.d / n_fit, float(gamma2))
    return fit.with_correction(
        Correction("sloe", alpha=params.alpha, sigma_star=params.sigma_star, correct_intercept=correct_intercept)
    )


def _platt_score(t, z, y, offset):
    p = expit(offset + t * z)
    return float(z @ (y - p)), float(-(z * z) @ (p * (1.0 - p)))


def platt_scale_factor(z, y, offset=None, tol: float = 1e-10, max_iter: int = 200) -> float:
    """Maximize ``sum_i loglik(y_i, sigmoid(offset_i + t z_i))`` over the scalar t.

    The objective is concave in t; Newton steps are accepted only while they
    stay inside the current sign-change bracket of the score, otherwise the
    bracket is bisected.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    offset = np.zeros_like(z) if offset is None else np.broadcast_to(np.asarray(offset, dtype=float), z.shape)
    if y.size == 0 or y.min() == y.max():
        raise ConfigError("Platt scaling needs both classes in the validation rows")
    g0, _ = _platt_score(0.0, z, y, offset)
    if g0 == 0.0:
        return 0.0
    direction = 1.0 if g0 > 0 else -1.0
    lo, hi = 0.0, direction
    for _ in range(200):
        g, _ = _platt_score(hi, z, y, offset)
        if g * direction <= 0:
            break
        lo, hi = hi, 2 * hi
    else:
        raise NumericalError("Platt objective has no finite maximizer (separable scores)")
    a, b = min(lo, hi), max(lo, hi)
    t = 0.5 * (a + b)
    for _ in range(max_iter):
        g, h = _platt_score(t, z, y, offset)
        if g > 0:
            a = t
        else:
            b = t
        newton = t - g / h if h < 0 else np.nan
        t_new = newton if a < newton < b else 0.5 * (a + b)
        if abs(t_new - t) <= tol * max(1.0, abs(t)):
            return float(t_new)
        t = t_new
    raise NumericalError("Platt scaling did not converge")


def platt_rescale(fit: GlmFit, X_val, Y_val, scale_intercept: bool = True) -> GlmFit:
    """Rescale a fit by the factor maximizing the validation likelihood.

    With ``scale_intercept=False`` only the slopes are rescaled and the
    intercept enters the objective as a fixed offset.
    """
    X_val = np.asarray(X_val, dtype=float)
    if scale_intercept:
        t = platt_scale_factor(fit.raw_linear_predictor(X_val), Y_val)
    else:
        t = platt_scale_factor(X_val @ fit.coefficients, Y_val, offset=fit.intercept)
    return fit.with_correction(Correction("platt", t=t, correct_intercept=scale_intercept))


def platt_rescale_loo(
    X, Y, rows=None, fit: GlmFit | None = None, z_loo=None, scale_intercept: bool = True
) -> GlmFit:
    """Full-data MLE rescaled by the factor calibrating its leave-one-out scores."""
    if fit is None:
        fit = fit_logistic_mle(X, Y, rows)
    require_converged(fit)
    if z_loo is None:
        z_loo, _ = loo_linear_predictors(fit, X, Y, rows)
    idx = _select(rows, np.asarray(X).shape[0])
    y = np.asarray(Y, dtype=float)[idx]
    if scale_intercept:
        t = platt_scale_factor(z_loo, y)
    else:
        # Slopes-only: hold the full-data intercept fixed.
        t = platt_scale_factor(z_loo - fit.intercept, y, offset=fit.intercept)
    return fit.with_correction(Correction("platt", t=t, correct_intercept=scale_intercept))


def _require_sloe(fit: GlmFit):
    if fit.correction.kind != "sloe":
        raise ConfigError("operation needs a fit carrying a SLOE correction")


def sigma_x2_estimate(fit: GlmFit, x, n_fit: int | None = None, isotropic: bool = True):
    """Variance of the debiased linear predictor at x: ``(sigma*/alpha)^2 |x|^2 / n``."""
    _require_sloe(fit)
    if not isotropic:
        raise ConfigError("sigma_x2_estimate only supports isotropic covariates")
    n_fit = n_fit or fit.fit_meta.n_obs
    if not n_fit or n_fit <= 0:
        raise ConfigError("number of fitting rows is unknown")
    x = np.asarray(x, dtype=float)
    c = fit.correction
    return (c.sigma_star / c.alpha) ** 2 * np.sum(x * x, axis=-1) / n_fit


def inverse_propensity_corrected(fit: GlmFit, sigma_x2, x):
    """Jensen-gap corrected ``1 / pi(x)``: ``1 + exp(-z/alpha - sigma_x2/2)``."""
    _require_sloe(fit)
    return 1.0 + np.exp(-fit.linear_predictor(x) - 0.5 * np.asarray(sigma_x2))


def inverse_control_propensity_corrected(fit: GlmFit, sigma_x2, x):
    """Control-arm analogue, estimating ``1 / (1 - pi(x))``."""
    _require_sloe(fit)
    return 1.0 + np.exp(fit.linear_predictor(x) - 0.5 * np.asarray(sigma_x2))


def predict(fit: GlmFit, x, mode: str = "raw", sigma_x2=None, k: int = 1):
    """Mean prediction under the fit's (corrected) coefficients.

    ``mode="corrected"`` evaluates the order-k noise-corrected link; when
    ``sigma_x2`` is omitted it is estimated from the SLOE correction.
    """
    x = np.asarray(x, dtype=float)
    lin = fit.linear_predictor(x)
    if fit.family == "gaussian":
        return lin
    if mode == "raw":
        return expit(lin)
    if mode != "corrected":
        raise ConfigError(f"unknown prediction mode {mode!r}")
    if sigma_x2 is None:
        sigma_x2 = sigma_x2_estimate(fit, x)
    return corrected_link(lin, sigma_x2, k)


def exact_loo_linear_predictors(X, Y, rows=None):
    """Refit without each row in turn.  Quadratic cost; a test oracle."""
    idx = _select(rows, np.asarray(X).shape[0])
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    out = np.empty(idx.size)
    for j, i in enumerate(idx):
        keep = np.delete(idx, j)
        f = fit_logistic_mle(X, Y, keep)
        out[j] = f.raw_linear_predictor(X[i])
    return out

