"""Closed-form variance results and their Monte Carlo checks.

Monte Carlo routines return point estimates together with their Monte Carlo
standard errors; callers compare against combined standard errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from hdate.errors import ConfigError
from hdate.simcore import rep_generator

MIN_MC = 10_000


@dataclass(frozen=True)
class VarianceReport:
    components: dict
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", float(sum(self.components.values())))

    def to_dict(self) -> dict:
        return {"components": dict(self.components), "total": self.total}


@dataclass(frozen=True)
class McMatrix:
    mean: np.ndarray
    se: np.ndarray
    n_mc: int

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "se": self.se.tolist(), "n_mc": self.n_mc}


@dataclass(frozen=True)
class McValue:
    value: float
    se: float
    n_mc: int

    def to_dict(self) -> dict:
        return {"value": self.value, "se": self.se, "n_mc": self.n_mc}


def _spd(Sigma, name="Sigma"):
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    if Sigma.shape[0] != Sigma.shape[1] or not np.allclose(Sigma, Sigma.T, rtol=1e-10, atol=1e-12):
        raise ConfigError(f"{name} must be a symmetric matrix")
    try:
        np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError:
        raise ConfigError(f"{name} is not positive definite") from None
    return Sigma


def _vec(v, d, name):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (d,):
        raise ConfigError(f"{name} has shape {v.shape}, expected ({d},)")
    return v


def exact_beta_variance(Sigma, N: int, d: int, sigma2: float) -> np.ndarray:
    """Exact covariance of OLS coefficients under Gaussian design: ``sigma2 Sigma^-1 / (N - d - 1)``."""
    Sigma = _spd(Sigma)
    if Sigma.shape[0] != d:
        raise ConfigError("Sigma must be d x d")
    if N <= d + 1:
        raise ConfigError(f"need N > d + 1 for a finite inverse moment, got N={N}, d={d}")
    if not sigma2 > 0:
        raise ConfigError("sigma2 must be positive")
    return sigma2 * np.linalg.inv(Sigma) / (N - d - 1)


def gcomp_variance(beta1, beta0, Sigma, var_beta_diff, mean_x, n2: int) -> VarianceReport:
    """Three-term variance of the sample-split G-computation estimator."""
    Sigma = _spd(Sigma)
    d = Sigma.shape[0]
    diff = _vec(beta1, d, "beta1") - _vec(beta0, d, "beta0")
    V = np.atleast_2d(np.asarray(var_beta_diff, dtype=float))
    if V.shape != (d, d):
        raise ConfigError("var_beta_diff must be d x d")
    mu = _vec(mean_x, d, "mean_x")
    if n2 <= 0:
        raise ConfigError("n2 must be positive")
    return VarianceReport(
        {
            "signal": float(diff @ Sigma @ diff) / n2,
            "overfit": float(np.trace(V @ Sigma)) / n2,
            "mean_shift": float(mu @ V @ mu),
        }
    )


def gcomp_asymptotic_variance(kappa, sigma2, beta_diff_norm2, p, p11, p10, mean_x_norm2) -> float:
    """Limit of ``n var(theta_hat)`` for the sample-split G-computation estimator.

    ``||beta1 - beta0||^2 / p + sigma2/(1-kappa) ||E X||^2 (1/p11 + 1/p10)
    + sigma2 kappa / (p (1 - kappa))``.
    """
    if not 0 < kappa < 1:
        raise ConfigError("kappa must lie in (0, 1)")
    for name, v in (("p", p), ("p11", p11), ("p10", p10)):
        if not 0 < v < 1:
            raise ConfigError(f"{name} must lie in (0, 1)")
    if sigma2 < 0 or beta_diff_norm2 < 0 or mean_x_norm2 < 0:
        raise ConfigError("variances and squared norms must be nonnegative")
    return (
        beta_diff_norm2 / p
        + sigma2 / (1 - kappa) * mean_x_norm2 * (1 / p11 + 1 / p10)
        + sigma2 * kappa / (p * (1 - kappa))
    )


def aipw_remainder_variance(var_beta1, var_beta0, Sigma_Z1, Sigma_Z0) -> float:
    """``trace(Var(beta1_hat) Sigma_Z1) + trace(Var(beta0_hat) Sigma_Z0)``."""
    mats = [np.atleast_2d(np.asarray(m, dtype=float)) for m in (var_beta1, var_beta0, Sigma_Z1, Sigma_Z0)]
    d = mats[0].shape[0]
    if any(m.shape != (d, d) for m in mats):
        raise ConfigError("all matrices must be d x d")
    V1, V0, S1, S0 = mats
    return float(np.trace(V1 @ S1) + np.trace(V0 @ S0))


def _chunks(total, size=20_000):
    done = 0
    while done < total:
        m = min(size, total - done)
        yield m
        done += m


def estimate_sigma_z(eta, arm: int, n_mc: int = 100_000, seed: int = 0) -> McMatrix:
    """Monte Carlo ``var(Z^w)`` for isotropic Gaussian X.

    ``Z^1 = (pi - W) X / pi`` has covariance ``E[(1 - pi)/pi X X']`` and
    ``Z^0 = (pi - W) X / (1 - pi)`` has ``E[pi/(1 - pi) X X']``.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if arm not in (0, 1):
        raise ConfigError("arm must be 0 or 1")
    if n_mc < MIN_MC:
        raise ConfigError(f"n_mc must be at least {MIN_MC}")
    d = eta.size
    rng = rep_generator(seed, 0)
    s1 = np.zeros((d, d))
    s2 = np.zeros((d, d))
    for m in _chunks(n_mc):
        X = rng.standard_normal((m, d))
        z = X @ eta
        w = np.exp(-z) if arm == 1 else np.exp(z)
        prod = w[:, None, None] * X[:, :, None] * X[:, None, :]
        s1 += prod.sum(axis=0)
        s2 += (prod**2).sum(axis=0)
    mean = s1 / n_mc
    var = np.maximum(s2 / n_mc - mean**2, 0.0)
    return McMatrix(mean, np.sqrt(var / (n_mc - 1)), n_mc)


def efficiency_bound(beta1, beta0, Sigma, eta, sigma2: float, n_mc: int = 100_000, seed: int = 0) -> McValue:
    """Semiparametric bound ``var((b1-b0)'X) + sigma2 E[1/e(X) + 1/(1-e(X))]``.

    The first term is exact; the second is averaged over ``X ~ N(0, Sigma)``.
    """
    Sigma = _spd(Sigma)
    d = Sigma.shape[0]
    diff = _vec(beta1, d, "beta1") - _vec(beta0, d, "beta0")
    eta = _vec(eta, d, "eta")
    if n_mc < MIN_MC:
        raise ConfigError(f"n_mc must be at least {MIN_MC}")
    if not sigma2 > 0:
        raise ConfigError("sigma2 must be positive")
    sd = math.sqrt(float(eta @ Sigma @ eta))
    rng = rep_generator(seed, 0)
    z = sd * rng.standard_normal(n_mc)
    # 1/e + 1/(1-e) = 2 + e^z + e^-z for e = sigmoid(z).
    term = sigma2 * (2.0 + np.exp(z) + np.exp(-z))
    first = float(diff @ Sigma @ diff)
    return McValue(first + float(term.mean()), float(term.std(ddof=1) / math.sqrt(n_mc)), n_mc)


@dataclass(frozen=True)
class SymmetryCheck:
    lhs: np.ndarray
    rhs: np.ndarray
    difference: np.ndarray
    se: np.ndarray
    n_mc: int

    @property
    def max_z(self) -> float:
        return float(np.max(np.abs(self.difference) / np.maximum(self.se, 1e-300)))

    def passed(self, n_se: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.difference) <= n_se * self.se))

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs.tolist(),
            "rhs": self.rhs.tolist(),
            "difference": self.difference.tolist(),
            "se": self.se.tolist(),
            "n_mc": self.n_mc,
            "max_z": self.max_z,
            "passed": self.passed(),
        }


def wishart_symmetry_check(n: int, d: int, eta, n_mc: int = 200_000, seed: int = 0) -> SymmetryCheck:
    """Compare ``E[prod_i f(X_i) S^-1]`` with ``2^-n E[S^-1]``, ``S = sum_i X_i X_i'``.

    ``f = sigmoid(eta' x)`` satisfies ``f(x) = 1 - f(-x)``.  Both sides are
    multiplied by ``2^n`` and estimated from the same draws; the standard
    error is that of the paired difference.
    """
    eta = _vec(eta, d, "eta")
    if n < d + 2:
        raise ConfigError("need n >= d + 2 for the inverse moment to exist")
    if n > 30 or d > 5:
        raise ConfigError("the 2^n-weighted Monte Carlo is only stable for n <= 30 and d <= 5")
    if n_mc < MIN_MC:
        raise ConfigError(f"n_mc must be at least {MIN_MC}")
    rng = rep_generator(seed, 0)
    acc = {k: np.zeros((d, d)) for k in ("l", "r", "dd", "dd2")}
    for m in _chunks(n_mc, 50_000):
        X = rng.standard_normal((m, n, d))
        Sinv = np.linalg.inv(np.einsum("mni,mnj->mij", X, X))
        weight = np.exp(np.sum(np.log(2.0 * expit(X @ eta)), axis=1))
        diff = (weight - 1.0)[:, None, None] * Sinv
        acc["l"] += (weight[:, None, None] * Sinv).sum(axis=0)
        acc["r"] += Sinv.sum(axis=0)
        acc["dd"] += diff.sum(axis=0)
        acc["dd2"] += (diff**2).sum(axis=0)
    lhs, rhs, dd = acc["l"] / n_mc, acc["r"] / n_mc, acc["dd"] / n_mc
    var = np.maximum(acc["dd2"] / n_mc - dd**2, 0.0)
    return SymmetryCheck(lhs, rhs, dd, np.sqrt(var / (n_mc - 1)), n_mc)


@dataclass(frozen=True)
class FloorRow:
    n: int
    d: int
    variance: float
    mc_se: float
    theory: float

    def to_dict(self) -> dict:
        return {"n": self.n, "d": self.d, "variance": self.variance, "mc_se": self.mc_se, "theory": self.theory}


def prediction_variance_floor(
    kappa: float,
    n_grid,
    reps: int = 500,
    seed: int = 0,
    sigma2: float = 1.0,
    fixed_d: int | None = None,
) -> list[FloorRow]:
    """Variance of ``x' beta_hat`` at ``x = (1, ..., 1)`` across simulated OLS fits.

    Each fit regresses ``Y = X beta + eps`` on ``n`` Gaussian rows with
    ``d = round(kappa n)`` covariates (or ``fixed_d``).  ``theory`` is the
    exact value ``sigma2 d / (n - d - 1)``.
    """
    if reps < 2:
        raise ConfigError("need at least 2 reps")
    rows = []
    for n in n_grid:
        d = int(fixed_d) if fixed_d is not None else int(round(kappa * n))
        if fixed_d is None and kappa * n < 8:
            raise ConfigError(f"kappa * n must be at least 8, got {kappa * n:g} at n={n}")
        if n <= d + 1:
            raise ConfigError(f"n={n} is too small for d={d}")
        rng = rep_generator(seed, n)
        x = np.ones(d)
        vals = np.empty(reps)
        for r in range(reps):
            X = rng.standard_normal((n, d))
            eps = math.sqrt(sigma2) * rng.standard_normal(n)
            # beta = 0 without loss of generality: OLS error is linear in eps.
            coef = np.linalg.lstsq(X, eps, rcond=None)[0]
            vals[r] = x @ coef
        v = float(np.var(vals, ddof=1))
        rows.append(FloorRow(int(n), d, v, v * math.sqrt(2.0 / (reps - 1)), sigma2 * d / (n - d - 1)))
    return rows


def ols_arm_variance(
    N: int, d: int, gamma2: float = 5.0, reps: int = 2000, seed: int = 0, sigma2: float = 1.0
) -> McValue:
    """Average coordinate variance of OLS on ``N`` treated units under logistic assignment.

    Rows ``X ~ N(0, I_d)`` are drawn with ``W ~ Bernoulli(sigmoid(eta' X))``,
    ``|eta|^2 = gamma2``, until ``N`` treated rows are collected; the
    no-intercept OLS error on those rows is then recorded.  Selection into the
    arm leaves the inverse moment of the Gram matrix unchanged, so the result
    should match ``sigma2 / (N - d - 1)``.  ``se`` is the Monte Carlo error of
    the coordinate average.
    """
    if N < d + 2:
        raise ConfigError("need N >= d + 2")
    if reps < 2:
        raise ConfigError("need at least 2 reps")
    rng = rep_generator(seed, 0)
    eta = np.full(d, math.sqrt(gamma2 / d))
    err = np.empty((reps, d))
    for r in range(reps):
        rows = []
        while sum(len(b) for b in rows) < N:
            X = rng.standard_normal((2 * N, d))
            rows.append(X[rng.random(2 * N) < expit(X @ eta)])
        X = np.concatenate(rows)[:N]
        eps = math.sqrt(sigma2) * rng.standard_normal(N)
        err[r] = np.linalg.lstsq(X, eps, rcond=None)[0]
    per_coord = err.var(axis=0, ddof=1)
    return McValue(float(per_coord.mean()), float(per_coord.std(ddof=1) / math.sqrt(d)), reps)
