"""Asymptotic bias and variance of the high-dimensional logistic MLE.

For isotropic Gaussian covariates with ``d / n -> kappa`` and signal strength
``gamma2 = var(eta @ X)``, the logistic MLE satisfies
``eta_hat_j - alpha * eta_j ~ N(0, sigma_star**2 / n)``.  The triple
``(alpha, sigma_star, lambda)`` solves three equations involving the logistic
proximal operator, evaluated here with tensorized Gauss-Hermite quadrature on
the bivariate Gaussian ``(Q1, Q2)`` with ``var(Q1) = gamma2``,
``cov(Q1, Q2) = -alpha * gamma2`` and ``var(Q2) = alpha**2 * gamma2 +
kappa * sigma_star**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.optimize
from scipy.special import expit

from hdate.errors import ConfigError, NoSolutionError

DEFAULT_NODES = 48
GAMMA_FLOOR = 1e-3


@dataclass(frozen=True)
class SloeParameters:
    alpha: float
    sigma_star: float
    lam: float
    kappa: float
    gamma2: float
    residual: float
    n_iter: int

    @property
    def corrupted_strength(self) -> float:
        """Limit of ``var(x @ eta_hat)``: ``alpha**2 gamma2 + kappa sigma_star**2``."""
        return self.alpha**2 * self.gamma2 + self.kappa * self.sigma_star**2


@lru_cache(maxsize=8)
def _grid(n_nodes: int):
    z, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    w = w / math.sqrt(2 * math.pi)
    z1, z2 = np.meshgrid(z, z, indexing="ij")
    return z1.ravel(), z2.ravel(), np.outer(w, w).ravel()


def prox_logistic(z, lam: float, tol: float = 1e-13, max_iter: int = 100):
    """Solve ``t + lam * sigmoid(t) = z`` for t (prox of ``lam * log(1 + e^t)``).

    Newton on a monotone function, safeguarded by the bracket
    ``[z - lam, z]`` so large ``lam`` cannot make it oscillate.
    """
    z = np.asarray(z, dtype=float)
    lo, hi = z - lam, z.copy()
    t = z - lam * expit(z)
    dx = np.full_like(z, abs(lam) + 1.0)
    dxold = dx.copy()
    for _ in range(max_iter):
        s = expit(t)
        f = t + lam * s - z
        pos = f > 0
        hi = np.where(pos, t, hi)
        lo = np.where(pos, lo, t)
        step = f / (1.0 + lam * s * (1.0 - s))
        cand = t - step
        # Bisect where Newton leaves the bracket or is not converging fast
        # enough relative to the step before last.
        slow = (cand < lo) | (cand > hi) | (np.abs(step) > 0.5 * np.abs(dxold))
        slow &= np.abs(step) > tol * np.maximum(1.0, np.abs(t))
        cand = np.where(slow, 0.5 * (lo + hi), cand)
        dxold = dx
        dx = cand - t
        t = cand
        if np.max(np.abs(dx) / np.maximum(1.0, np.abs(t))) < tol:
            break
    return t


def _moments(alpha, sigma, ell, gamma, kappa, n_nodes):
    """Scaled residuals of the three fixed-point equations.

    ``ell = lambda / kappa``.  Each equation is divided by its natural order in
    kappa (and the second by gamma**2) so the system stays well conditioned as
    kappa -> 0 or gamma -> 0.
    """
    z1, z2, w = _grid(n_nodes)
    q1 = gamma * z1
    q2 = -alpha * q1 + math.sqrt(kappa) * sigma * z2
    lam = kappa * ell
    prox = prox_logistic(q2, lam)
    s1 = expit(q1)
    sp = expit(prox)
    f1 = w @ (2 * s1 * (ell * sp) ** 2) - sigma**2
    # E[s(Q1) Q1 lambda s(P)] / (kappa gamma^2) stays O(1) as gamma -> 0.
    f2 = w @ (s1 * z1 * ell * sp) / gamma
    denom = 1.0 + lam * sp * (1.0 - sp)
    f3 = (w @ (2 * s1 * lam * sp * (1.0 - sp) / denom)) / kappa - 1.0
    return np.array([f1, f2, f3])


def _newton(fun, x0, tol, max_iter=80):
    x = np.array(x0, dtype=float)
    fx = fun(x)
    norm = np.max(np.abs(fx))
    it = 0
    for it in range(1, max_iter + 1):
        if not np.all(np.isfinite(fx)):
            raise NoSolutionError("fixed-point residual is not finite")
        if norm <= tol:
            return x, norm, it
        h = 1e-7 * np.maximum(1.0, np.abs(x))
        J = np.empty((fx.size, x.size))
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = h[j]
            J[:, j] = (fun(x + e) - fun(x - e)) / (2 * h[j])
        try:
            step = np.linalg.solve(J, fx)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, fx, rcond=None)[0]
        # Damp: bound the log-scale step, then backtrack on the max residual.
        big = np.max(np.abs(step))
        if big > 1.0:
            step = step / big
        s = 1.0
        while s > 1e-6:
            cand = x - s * step
            fc = fun(cand)
            nc = np.max(np.abs(fc)) if np.all(np.isfinite(fc)) else np.inf
            if nc < norm:
                break
            s *= 0.5
        else:
            raise NoSolutionError(f"damped Newton stalled at residual {norm:.2e}")
        x, fx, norm = cand, fc, nc
    if norm <= tol:
        return x, norm, it
    raise NoSolutionError(f"no convergence after {max_iter} iterations (residual {norm:.2e})")


def _classical_start(kappa, gamma, n_nodes):
    """Small-kappa expansion: alpha = 1 and lambda, sigma from first order terms."""
    z1, z2, w = _grid(n_nodes)
    q1 = gamma * z1
    s1 = expit(q1)
    s2 = expit(-q1)
    ell = 1.0 / (w @ (2 * s1 * s2 * (1 - s2)))
    sigma = ell * math.sqrt(w @ (2 * s1 * s2**2))
    return np.log([1.0, sigma, ell])


def _solve3(kappa, gamma, n_nodes, tol, start=None, max_iter=80):
    def fun(u):
        a, s, l = np.exp(u)
        return _moments(a, s, l, gamma, kappa, n_nodes)

    x0 = _classical_start(kappa, gamma, n_nodes) if start is None else start
    return _newton(fun, x0, tol, max_iter=max_iter)


def _check_inputs(kappa, n_nodes):
    if not 0 < kappa < 1:
        raise ConfigError(f"kappa must lie in (0, 1), got {kappa}")
    if n_nodes < 48:
        raise ConfigError("use at least 48 quadrature nodes per axis")


def _solve_at(kappa, gamma, n_nodes, tol, start=None):
    """Newton from ``start`` (or the classical start), then kappa continuation."""
    for x0 in ([start] if start is not None else []) + [None]:
        try:
            return _solve3(kappa, gamma, n_nodes, tol, start=x0)
        except NoSolutionError:
            pass
    u, it = None, 0
    for k in np.geomspace(min(1e-3, kappa / 2), kappa, 25):
        u, res, step_it = _solve3(float(k), gamma, n_nodes, tol, start=u)
        it += step_it
    return u, res, it


def _pack(u, res, it, kappa, gamma2):
    a, s, l = np.exp(u)
    return SloeParameters(float(a), float(s), float(kappa * l), float(kappa), float(gamma2), float(res), it)


@lru_cache(maxsize=4096)
def solve_sur_candes_system(kappa: float, gamma2: float, n_nodes: int = DEFAULT_NODES, tol: float = 1e-9) -> SloeParameters:
    """Solve for ``(alpha, sigma_star, lambda)`` at aspect ratio ``kappa``.

    Newton is started from the classical (kappa -> 0) solution; if it fails the
    solution is continued along a geometric grid of kappa values.  Failure
    along the continuation path is reported as :class:`NoSolutionError`,
    which in practice means ``(kappa, gamma2)`` lies beyond the phase boundary
    where the MLE stops existing.
    """
    _check_inputs(kappa, n_nodes)
    if gamma2 < 0:
        raise ConfigError("gamma2 must be nonnegative")
    gamma = max(math.sqrt(gamma2), GAMMA_FLOOR)
    u, res, it = _solve_at(kappa, gamma, n_nodes, tol)
    return _pack(u, res, it, kappa, gamma2)


def solve_from_corrupted_strength(kappa: float, eta2: float, n_nodes: int = DEFAULT_NODES, tol: float = 1e-9) -> SloeParameters:
    """Solve the system when only ``alpha**2 gamma2 + kappa sigma_star**2`` is known.

    ``eta2`` is the variance of the (leave-one-out) linear predictor.  The
    corrupted strength increases with gamma2, so gamma2 is found by a
    bracketed 1-d root search with warm-started solves.  When ``eta2`` does not
    exceed the pure-noise value the data are consistent with no signal and the
    null solution is returned; when it exceeds every value attainable below
    the phase boundary :class:`NoSolutionError` is raised.
    """
    _check_inputs(kappa, n_nodes)
    null = solve_sur_candes_system(kappa, 0.0, n_nodes, tol)
    if eta2 <= null.corrupted_strength:
        return null
    warm = {0.0: np.log([null.alpha, null.sigma_star, null.lam / kappa])}

    def solve(g2):
        near = min(warm, key=lambda k: abs(k - g2))
        # Warm start only: a failure here just shrinks the step in gamma2.
        u, res, it = _solve3(kappa, max(math.sqrt(g2), GAMMA_FLOOR), n_nodes, tol, start=warm[near], max_iter=40)
        warm[g2] = u
        return _pack(u, res, it, kappa, g2)

    # Grow gamma2 geometrically from a small value so each solve is warm.
    lo, hi, fail = 0.0, min(1.0, eta2 - null.corrupted_strength), None
    for _ in range(80):
        try:
            s_hi = solve(hi).corrupted_strength
        except NoSolutionError:
            fail = hi
            hi = 0.5 * (lo + hi)
            continue
        if s_hi >= eta2:
            break
        lo = hi
        hi = 2.0 * hi if fail is None else 0.5 * (hi + fail)
        if fail is not None and fail - lo < 1e-6 * fail:
            break
    else:
        s_hi = -np.inf
    if s_hi < eta2:
        raise NoSolutionError(
            f"corrupted strength {eta2:.4g} is not attainable at kappa={kappa:.4g} below the phase boundary"
        )
    g2 = scipy.optimize.brentq(lambda g: solve(g).corrupted_strength - eta2, lo, hi, xtol=1e-12, rtol=1e-12)
    return solve(g2)
