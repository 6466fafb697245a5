"""Least-squares and logistic maximum-likelihood fits for nuisance models."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
import scipy.linalg
from scipy.special import expit

from hdate.errors import (
    ConfigError,
    ConvergenceError,
    FoldInfeasibleError,
    MleNonexistenceError,
    NumericalError,
    RankDeficientError,
)

SEPARATION_NORM = 1e3
SEPARATION_DECREMENT = 1e-4
SEPARATION_STEP = 0.1


@dataclass(frozen=True)
class Correction:
    kind: Literal["none", "platt", "sloe"] = "none"
    t: float | None = None
    alpha: float | None = None
    sigma_star: float | None = None
    correct_intercept: bool = True

    def __post_init__(self):
        if self.kind not in ("none", "platt", "sloe"):
            raise ConfigError(f"unknown correction kind {self.kind!r}")
        if self.kind == "platt" and self.t is None:
            raise ConfigError("platt correction needs t")
        if self.kind == "sloe" and not (self.alpha and self.alpha > 0 and self.sigma_star is not None):
            raise ConfigError("sloe correction needs alpha > 0 and sigma_star")

    def to_dict(self) -> dict:
        if self.kind == "none":
            return {"kind": "none"}
        if self.kind == "platt":
            return {"kind": "platt", "t": self.t, "correct_intercept": self.correct_intercept}
        return {
            "kind": "sloe",
            "alpha": self.alpha,
            "sigma_star": self.sigma_star,
            "correct_intercept": self.correct_intercept,
        }


NO_CORRECTION = Correction()


@dataclass(frozen=True)
class FitMeta:
    n_iter: int = 0
    converged: bool = True
    grad_norm: float = 0.0
    condition: float = float("nan")
    n_obs: int = 0


@dataclass(frozen=True)
class GlmFit:
    """A fitted GLM with an optional post-hoc correction.

    ``coefficients`` and ``intercept`` are always the raw fitted values; the
    correction is applied by :meth:`effective`.  Platt scaling multiplies and
    SLOE divides; ``correct_intercept=False`` leaves the intercept alone.
    """

    coefficients: np.ndarray
    intercept: float
    family: Literal["gaussian", "binomial"]
    correction: Correction = NO_CORRECTION
    fit_meta: FitMeta = field(default_factory=FitMeta)

    def __post_init__(self):
        coef = np.array(self.coefficients, dtype=float)
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "intercept", float(self.intercept))

    @property
    def d(self) -> int:
        return self.coefficients.shape[0]

    def effective(self) -> tuple[np.ndarray, float]:
        c = self.correction
        if c.kind == "platt":
            b0 = c.t * self.intercept if c.correct_intercept else self.intercept
            return c.t * self.coefficients, b0
        if c.kind == "sloe":
            b0 = self.intercept / c.alpha if c.correct_intercept else self.intercept
            return self.coefficients / c.alpha, b0
        return self.coefficients, self.intercept

    def raw_linear_predictor(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X) @ self.coefficients + self.intercept

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.d:
            raise ConfigError(f"expected {self.d} covariates, got {X.shape[-1]}")
        coef, b0 = self.effective()
        return X @ coef + b0

    def with_correction(self, correction: Correction) -> "GlmFit":
        return replace(self, correction=correction)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "coefficients": self.coefficients.tolist(),
            "intercept": self.intercept,
            "correction": self.correction.to_dict(),
            "fit_meta": {
                "n_iter": self.fit_meta.n_iter,
                "converged": self.fit_meta.converged,
                "grad_norm": self.fit_meta.grad_norm,
                "condition": self.fit_meta.condition,
                "n_obs": self.fit_meta.n_obs,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "GlmFit":
        corr = dict(data.get("correction", {"kind": "none"}))
        meta = data.get("fit_meta", {})
        return cls(
            coefficients=np.asarray(data["coefficients"], dtype=float),
            intercept=data["intercept"],
            family=data["family"],
            correction=Correction(**corr),
            fit_meta=FitMeta(**meta),
        )


def _select(rows, n):
    if rows is None:
        return np.arange(n)
    rows = np.asarray(rows)
    if rows.dtype == bool:
        return np.flatnonzero(rows)
    return rows


def _design(X, intercept):
    return np.column_stack([np.ones(X.shape[0]), X]) if intercept else X


def ols(X: np.ndarray, y: np.ndarray, intercept: bool = True, rcond: float = 1e-10) -> GlmFit:
    """Least squares through a column-pivoted QR factorization."""
    A = _design(np.asarray(X, dtype=float), intercept)
    n, p = A.shape
    if n <= p:
        raise FoldInfeasibleError(f"need more than {p} rows for {p} parameters, got {n}")
    Q, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rcond * diag[0]))
    if rank < p:
        col = int(piv[rank]) - (1 if intercept else 0)
        raise RankDeficientError(f"design is rank deficient at covariate column {col}", column=col)
    sol = np.empty(p)
    sol[piv] = scipy.linalg.solve_triangular(R, Q.T @ y)
    coef, b0 = (sol[1:], sol[0]) if intercept else (sol, 0.0)
    resid = y - A @ sol
    grad = float(np.max(np.abs(A.T @ resid))) / n
    meta = FitMeta(n_iter=1, converged=True, grad_norm=grad, condition=float(diag[0] / diag[-1]), n_obs=n)
    return GlmFit(coef, b0, "gaussian", fit_meta=meta)


def fit_ols(dataset, arm: int, rows=None, intercept: bool = True) -> GlmFit:
    """Regress Y on X among units with ``W == arm`` (restricted to ``rows``)."""
    idx = _select(rows, dataset.n)
    idx = idx[dataset.W[idx] == arm]
    need = dataset.d + (1 if intercept else 0)
    if idx.size <= need:
        raise FoldInfeasibleError(
            f"arm {arm} has {idx.size} rows, needs more than {need}", arm=arm
        )
    return ols(dataset.X[idx], dataset.Y[idx], intercept=intercept)


def _neg_loglik(z, y):
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def logistic_newton(A: np.ndarray, y: np.ndarray, tol: float = 1e-8, max_iter: int = 100, start=None):
    """Newton iterations for the mean logistic negative log-likelihood.

    Returns ``(theta, chol, meta)`` where ``chol`` is the Cholesky factor of the
    Hessian at ``theta`` (mean scale).  Raises :class:`MleNonexistenceError`
    when the iterates diverge the way they do under separation.
    """
    n, p = A.shape
    theta = np.zeros(p) if start is None else np.array(start, dtype=float)
    z = A @ theta
    f = _neg_loglik(z, y)
    converged = False
    grad_norm = np.inf
    it = 0
    chol = None
    for it in range(1, max_iter + 1):
        mu = expit(z)
        grad = A.T @ (mu - y) / n
        w = mu * (1.0 - mu)
        H = (A * w[:, None]).T @ A / n
        try:
            chol = scipy.linalg.cho_factor(H, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            if np.linalg.norm(theta[1:] if p > 1 else theta) > SEPARATION_NORM / 10:
                raise MleNonexistenceError("Hessian became singular while coefficients diverge") from None
            raise NumericalError("logistic Hessian is singular") from None
        grad_norm = float(np.max(np.abs(grad)))
        step = scipy.linalg.cho_solve(chol, grad, check_finite=False)
        if grad_norm <= tol:
            # Under separation the gradient vanishes while Newton steps stay O(1).
            if np.max(np.abs(step)) > SEPARATION_STEP:
                raise MleNonexistenceError(
                    f"gradient vanished but the Newton step is still {np.max(np.abs(step)):.3g}; "
                    "the data are separable and the MLE does not exist"
                )
            converged = True
            break
        decrement = float(grad @ step)
        if np.linalg.norm(theta) > SEPARATION_NORM and decrement > SEPARATION_DECREMENT:
            raise MleNonexistenceError(
                f"coefficient norm {np.linalg.norm(theta):.3g} exceeds {SEPARATION_NORM:g} "
                "with non-vanishing Newton decrement; the MLE does not exist"
            )
        s = 1.0
        while True:
            cand = theta - s * step
            zc = A @ cand
            fc = _neg_loglik(zc, y)
            if fc <= f + 1e-4 * s * (-decrement) or s < 1e-10:
                break
            s *= 0.5
        if s < 1e-10 and fc > f:
            break
        theta, z, f = cand, zc, fc
    if not converged and np.linalg.norm(theta) > SEPARATION_NORM:
        raise MleNonexistenceError("iterations diverged; the MLE does not exist")
    diag = np.diag(chol[0]) if chol is not None else np.array([np.nan])
    cond = float((diag.max() / diag.min()) ** 2) if chol is not None else float("nan")
    meta = FitMeta(n_iter=it, converged=converged, grad_norm=grad_norm, condition=cond, n_obs=n)
    return theta, chol, meta


def fit_logistic_mle(X, Y, rows=None, intercept: bool = True, tol: float = 1e-8, max_iter: int = 100) -> GlmFit:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    idx = _select(rows, X.shape[0])
    y = Y[idx]
    if not np.isin(y, (0.0, 1.0)).all():
        raise ConfigError("logistic outcome must be binary")
    if y.size == 0 or y.min() == y.max():
        raise ConfigError("both classes must be present to fit a logistic model")
    A = _design(X[idx], intercept)
    theta, _, meta = logistic_newton(A, y, tol=tol, max_iter=max_iter)
    coef, b0 = (theta[1:], theta[0]) if intercept else (theta, 0.0)
    return GlmFit(coef, b0, "binomial", fit_meta=meta)


def require_converged(fit: GlmFit) -> GlmFit:
    if not fit.fit_meta.converged:
        raise ConvergenceError(
            f"logistic fit did not converge in {fit.fit_meta.n_iter} iterations "
            f"(gradient {fit.fit_meta.grad_norm:.2e})"
        )
    return fit


def logit(p):
    return np.log(p) - np.log1p(-p)


def binomial_loglik(p, y) -> float:
    return float(np.sum(y * np.log(p) + (1 - y) * np.log1p(-p)))


__all__ = [
    "Correction",
    "FitMeta",
    "GlmFit",
    "NO_CORRECTION",
    "fit_logistic_mle",
    "fit_ols",
    "logistic_newton",
    "ols",
    "require_converged",
]
