"""Synthetic data from the linear and logistic structural models.

Covariates are standard Gaussian, treatment follows a logistic propensity
``sigmoid(eta @ x)`` and the potential outcomes follow either a homoskedastic
linear model or a logistic model with an additive log-odds offset ``tau`` in
the treated arm.  All coefficient vectors share one sparse sign pattern and
are scaled to hit prescribed signal strengths.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from scipy.special import expit

from hdate.errors import ConfigError, DatasetFormatError

Family = Literal["linear", "logistic"]

DEFAULT_QUADRATURE_NODES = 128


@dataclass(frozen=True)
class TrueParams:
    eta: np.ndarray
    beta1: np.ndarray
    beta0: np.ndarray
    tau: float
    sigma2: float = 1.0
    family: Family = "linear"

    def __post_init__(self):
        for name in ("eta", "beta1", "beta0"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        d = self.eta.shape[0]
        if d < 1 or self.beta1.shape != (d,) or self.beta0.shape != (d,):
            raise ConfigError("eta, beta1 and beta0 must be vectors of equal length d >= 1")
        if self.family not in ("linear", "logistic"):
            raise ConfigError(f"unknown family {self.family!r}")
        if not self.sigma2 > 0:
            raise ConfigError("sigma2 must be positive")

    @property
    def d(self) -> int:
        return self.eta.shape[0]

    def propensity(self, X: np.ndarray) -> np.ndarray:
        return expit(X @ self.eta)

    def outcome_mean(self, X: np.ndarray, arm: int) -> np.ndarray:
        """E[Y(arm) | X] under the true model."""
        beta = self.beta1 if arm == 1 else self.beta0
        lin = X @ beta + (self.tau if arm == 1 else 0.0)
        return lin if self.family == "linear" else expit(lin)


@dataclass(frozen=True)
class SimulationConfig:
    n: int
    d: int
    gamma2: float = 5.0
    r2_treated: float = 0.9
    r2_control: float = 0.8
    sigma2: float = 1.0
    tau: float = 1.0
    family: Family = "linear"
    seed: int = 0
    n_reps: int = 1000
    folds: int = 5

    def __post_init__(self):
        if not (isinstance(self.n, int) and self.n > 0):
            raise ConfigError("n must be a positive integer")
        if not (isinstance(self.d, int) and self.d > 0):
            raise ConfigError("d must be a positive integer")
        if self.d >= self.n:
            raise ConfigError(f"need d < n, got d={self.d}, n={self.n}")
        if self.family not in ("linear", "logistic"):
            raise ConfigError(f"family must be 'linear' or 'logistic', got {self.family!r}")
        if self.gamma2 < 0:
            raise ConfigError("gamma2 must be nonnegative")
        if self.family == "linear":
            for name in ("r2_treated", "r2_control"):
                r2 = getattr(self, name)
                if not 0 < r2 < 1:
                    raise ConfigError(f"{name} must lie in (0, 1), got {r2}")
        if not self.sigma2 > 0:
            raise ConfigError("sigma2 must be positive")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.n_reps < 1:
            raise ConfigError("n_reps must be positive")
        if self.folds < 2:
            raise ConfigError("folds must be at least 2")
        if self.d % 8:
            raise ConfigError(f"d must be divisible by 8 for the coefficient pattern, got {self.d}")

    @property
    def kappa(self) -> float:
        return self.d / self.n

    @property
    def effective_kappa(self) -> float:
        """Aspect ratio seen by a nuisance fit trained on k-1 of k folds."""
        return self.d / (self.n * (self.folds - 1) / self.folds)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "SimulationConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def replace(self, **changes) -> "SimulationConfig":
        return SimulationConfig(**{**asdict(self), **changes})


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    W: np.ndarray
    Y: np.ndarray
    truth: TrueParams | None = field(default=None, compare=False)

    def __post_init__(self):
        # Private copies: the arrays are frozen below.
        X = np.array(self.X, dtype=float, order="C")
        W = np.array(self.W)
        Y = np.array(self.Y, dtype=float)
        if X.ndim != 2:
            raise ConfigError("X must be a 2-d array")
        if W.shape != (X.shape[0],) or Y.shape != (X.shape[0],):
            raise ConfigError("X, W and Y must have matching row counts")
        if not np.isin(W, (0, 1)).all():
            raise ConfigError("treatment entries must be 0 or 1")
        W = W.astype(np.int8)
        for arr in (X, W, Y):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def is_binary_outcome(self) -> bool:
        return bool(np.isin(self.Y, (0.0, 1.0)).all())

    @property
    def is_linear_outcome(self) -> bool:
        """Outcome model family: the truth's if known, else inferred from Y."""
        if self.truth is not None:
            return self.truth.family == "linear"
        return not self.is_binary_outcome

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.X, other.X)
            and np.array_equal(self.W, other.W)
            and np.array_equal(self.Y, other.Y)
        )


def make_coefficients(d: int, c: float) -> np.ndarray:
    """Sign pattern ``(c,...,c, -c,...,-c, 0,...,0)`` with d/8 entries per sign."""
    if d < 8 or d % 8:
        raise ConfigError(f"dimension must be a positive multiple of 8, got {d}")
    v = np.zeros(d)
    k = d // 8
    v[:k] = c
    v[k : 2 * k] = -c
    return v


def scale_for_variance(direction: np.ndarray, target_var: float) -> np.ndarray:
    """Rescale ``direction`` so that ``var(v @ X) = target_var`` for X ~ N(0, I)."""
    direction = np.asarray(direction, dtype=float)
    norm2 = float(direction @ direction)
    if norm2 == 0.0:
        raise ConfigError("cannot scale a zero direction")
    if target_var < 0:
        raise ConfigError("target variance must be nonnegative")
    return direction * math.sqrt(target_var / norm2)


def r2_to_signal_variance(r2: float, sigma2: float) -> float:
    return sigma2 * r2 / (1.0 - r2)


def true_params(config: SimulationConfig) -> TrueParams:
    u = make_coefficients(config.d, 1.0)
    eta = scale_for_variance(u, config.gamma2) if config.gamma2 > 0 else np.zeros(config.d)
    if config.family == "linear":
        beta1 = scale_for_variance(u, r2_to_signal_variance(config.r2_treated, config.sigma2))
        beta0 = scale_for_variance(u, r2_to_signal_variance(config.r2_control, config.sigma2))
    else:
        beta1 = eta.copy()
        beta0 = eta.copy()
    return TrueParams(eta, beta1, beta0, config.tau, config.sigma2, config.family)


def rep_generator(seed: int, rep_index: int) -> np.random.Generator:
    """Philox stream keyed by ``(seed, rep_index)``; independent of call order."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(rep_index,))
    return np.random.Generator(np.random.Philox(ss))


def simulate(config: SimulationConfig, rep_index: int, *, return_potential_outcomes: bool = False):
    """Draw one replicate dataset.

    Both potential outcomes share the same noise draw (a Gaussian for the
    linear family, a uniform threshold for the logistic family) so the
    individual effect ``Y(1) - Y(0)`` can be returned alongside the data.
    """
    if not 0 <= rep_index < config.n_reps:
        raise ConfigError(f"rep_index {rep_index} outside [0, {config.n_reps})")
    params = true_params(config)
    rng = rep_generator(config.seed, rep_index)
    X = rng.standard_normal((config.n, config.d))
    W = (rng.random(config.n) < expit(X @ params.eta)).astype(np.int8)
    if config.family == "linear":
        eps = rng.normal(0.0, math.sqrt(config.sigma2), config.n)
        y1 = X @ params.beta1 + config.tau + eps
        y0 = X @ params.beta0 + eps
    else:
        u = rng.random(config.n)
        y1 = (u < expit(X @ params.beta1 + config.tau)).astype(float)
        y0 = (u < expit(X @ params.beta0)).astype(float)
    Y = np.where(W == 1, y1, y0)
    data = Dataset(X, W, Y, params)
    if return_potential_outcomes:
        return data, y1, y0
    return data


def _gaussian_mean(fn, sd: float, n_nodes: int) -> float:
    """E[fn(sd * Z)], Z ~ N(0, 1), by probabilists' Gauss-Hermite quadrature."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    return float(weights @ fn(sd * nodes)) / math.sqrt(2 * math.pi)


def true_ate(params: TrueParams, n_nodes: int = DEFAULT_QUADRATURE_NODES) -> float:
    if params.family == "linear":
        return float(params.tau)
    if n_nodes < 64:
        raise ConfigError("use at least 64 quadrature nodes")
    sd1 = math.sqrt(float(params.beta1 @ params.beta1))
    sd0 = math.sqrt(float(params.beta0 @ params.beta0))
    m1 = _gaussian_mean(lambda z: expit(z + params.tau), sd1, n_nodes)
    m0 = _gaussian_mean(expit, sd0, n_nodes)
    return m1 - m0


def write_dataset(data: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["w", "y"] + [f"x{j + 1}" for j in range(data.d)])
        for w, y, row in zip(data.W, data.Y, data.X):
            writer.writerow([int(w), f"{y:.17g}"] + [f"{v:.17g}" for v in row])


def load_dataset(path, format: str = "csv") -> Dataset:
    if format != "csv":
        raise ConfigError(f"unsupported dataset format {format!r}")
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DatasetFormatError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetFormatError(f"{path}: empty file")
        header = [h.strip() for h in header]
        d = len(header) - 2
        expected = ["w", "y"] + [f"x{j + 1}" for j in range(d)]
        if d < 1 or header != expected:
            raise DatasetFormatError(f"{path}: header must be w,y,x1,...,xd; got {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise DatasetFormatError(
                    f"{path}:{lineno}: ragged row with {len(row)} fields, expected {d + 2}"
                )
            values = []
            for col, cell in enumerate(row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DatasetFormatError(
                        f"{path}:{lineno}: column {col + 1} ({header[col]}) is not numeric: {cell!r}"
                    ) from None
            if values[0] not in (0.0, 1.0):
                raise DatasetFormatError(
                    f"{path}:{lineno}: treatment must be 0 or 1, got {row[0].strip()}"
                )
            rows.append(values)
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    arr = np.array(rows)
    return Dataset(arr[:, 2:], arr[:, 0].astype(np.int8), arr[:, 1])
