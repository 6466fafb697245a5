"""Sigmoid derivatives and the noise-corrected inverse link series."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import expit

from hdate.errors import ConfigError

MAX_ORDER = 4


@lru_cache(maxsize=None)
def _derivative_polys() -> tuple[Polynomial, ...]:
    # d/dz P(s) = P'(s) s (1 - s) with s = sigmoid(z); P_0(s) = s.
    ds = Polynomial([0.0, 1.0, -1.0])
    polys = [Polynomial([0.0, 1.0])]
    for _ in range(2 * MAX_ORDER):
        polys.append(polys[-1].deriv() * ds)
    return tuple(polys)


def sigmoid_derivative(z, order: int):
    """``order``-th derivative of the logistic sigmoid, ``order <= 8``.

    Even orders >= 2 are odd functions of z, so they are evaluated at
    ``-|z|`` where ``sigmoid`` is small and then reflected; this keeps the
    polynomial-in-s form accurate out to |z| ~ 700.
    """
    if order < 0 or order > 2 * MAX_ORDER:
        raise ConfigError(f"derivative order must be in [0, {2 * MAX_ORDER}]")
    z = np.asarray(z, dtype=float)
    if order == 0:
        return expit(z)
    poly = _derivative_polys()[order]
    s = expit(-np.abs(z))
    val = poly(s)
    # order-th derivative has parity (-1)^(order+1) about z = 0.
    sign = np.where(z > 0, -1.0 if order % 2 == 0 else 1.0, 1.0)
    return sign * val


def corrected_link(z, sigma_x2, k: int = 1):
    """Truncated series ``sum_{m<=k} (-sigma_x2)^m / (2^m m!) h^{(2m)}(z)``.

    Approximately undoes the attenuation ``E[sigmoid(z + G)]`` for
    ``G ~ N(0, sigma_x2)``.
    """
    if not 0 <= k <= MAX_ORDER:
        raise ConfigError(f"series order must be in [0, {MAX_ORDER}], got {k}")
    sigma_x2 = np.asarray(sigma_x2, dtype=float)
    if np.any(sigma_x2 < 0):
        raise ConfigError("sigma_x2 must be nonnegative")
    out = expit(np.asarray(z, dtype=float))
    for m in range(1, k + 1):
        coef = (-sigma_x2) ** m / (2.0**m * math.factorial(m))
        out = out + coef * sigmoid_derivative(z, 2 * m)
    return out
