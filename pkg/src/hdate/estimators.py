"""Cross-fitted average treatment effect estimators.

Every estimator reduces to per-unit contributions ``psi_i`` evaluated with
out-of-fold nuisance predictions; the estimate is ``mean(psi)`` and the
per-fold values are the within-fold means of ``psi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy.special import expit

from hdate.errors import (
    ConfigError,
    ConvergenceError,
    DegeneratePropensityError,
    FoldInfeasibleError,
    NumericalError,
)
from hdate.nuisance.corrections import (
    inverse_control_propensity_corrected,
    inverse_propensity_corrected,
    loo_linear_predictors,
    platt_rescale,
    platt_rescale_loo,
    sigma_x2_estimate,
    sloe_correct,
)
from hdate.nuisance.glm import GlmFit, fit_logistic_mle, fit_ols, logit, require_converged
from hdate.nuisance.links import corrected_link
from hdate.simcore import Dataset, TrueParams, rep_generator

Method = Literal["mle", "platt", "sloe", "propensity_oracle", "full_oracle"]
METHODS: tuple[str, ...] = ("mle", "platt", "sloe", "propensity_oracle", "full_oracle")
ESTIMATOR_NAMES: tuple[str, ...] = (
    "gcomp",
    "ipw",
    "ipw_corrected",
    "aipw",
    "aipw_oracle",
    "tmle_gaussian",
    "tmle_binomial",
)

# Folds are drawn from a stream disjoint from simulate()'s rep streams.
_FOLD_STREAM = 2**31 - 1


@dataclass(frozen=True)
class OracleNuisance:
    """Stands in for a fitted model when the true nuisance is used."""

    truth: TrueParams
    role: Literal["propensity", "outcome1", "outcome0"]


Nuisance = GlmFit | OracleNuisance


@dataclass(frozen=True)
class FoldFits:
    propensity: Nuisance | None
    outcome1: Nuisance | None
    outcome0: Nuisance | None


@dataclass(frozen=True, eq=False)
class NuisanceBundle:
    """Out-of-fold nuisance fits and their predictions on every row.

    ``mu1``/``mu0`` use the configured outcome link; ``mu1_raw``/``mu0_raw``
    are plain inverse-link predictions (identical unless a corrected link is
    active).  ``inv_pi_corrected``/``inv_ctrl_corrected`` hold Jensen-gap
    corrected inverse propensities and exist only for SLOE propensity fits.
    """

    method: str
    family: str
    folds: tuple[tuple[np.ndarray, np.ndarray], ...]
    fits: tuple[FoldFits, ...]
    pi: np.ndarray
    mu1: np.ndarray
    mu0: np.ndarray
    mu1_raw: np.ndarray
    mu0_raw: np.ndarray
    inv_pi_corrected: np.ndarray | None = None
    inv_ctrl_corrected: np.ndarray | None = None
    outcome_link: str = "raw"

    def __post_init__(self):
        n = self.pi.shape[0]
        seen = np.zeros(n, dtype=int)
        for train, est in self.folds:
            seen[est] += 1
            if np.intersect1d(train, est).size:
                raise ConfigError("a training set overlaps its estimation set")
        if not np.all(seen == 1):
            raise ConfigError("estimation sets must partition the rows")

    @property
    def n(self) -> int:
        return self.pi.shape[0]

    @property
    def fold_sizes(self) -> np.ndarray:
        return np.array([est.size for _, est in self.folds])

    @property
    def fold_id(self) -> np.ndarray:
        out = np.empty(self.n, dtype=int)
        for j, (_, est) in enumerate(self.folds):
            out[est] = j
        return out

    @property
    def effective_kappa(self) -> float:
        """d over the mean training-split size."""
        for f in self.fits:
            for nu in (f.propensity, f.outcome1, f.outcome0):
                if isinstance(nu, GlmFit):
                    d = nu.d
                    break
            else:
                continue
            break
        else:
            return float("nan")
        return d / float(np.mean([train.size for train, _ in self.folds]))


@dataclass(frozen=True)
class TmleFluctuation:
    eps0: float
    eps1: float


@dataclass(frozen=True)
class EstimateResult:
    estimator: str
    estimate: float
    per_fold: np.ndarray
    fold_sizes: np.ndarray
    method: str = ""
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "nuisance": self.method,
            "estimate": self.estimate,
            "per_fold": [float(v) for v in self.per_fold],
            "fold_sizes": [int(v) for v in self.fold_sizes],
            "diagnostics": {k: _jsonable(v) for k, v in self.diagnostics.items()},
        }


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, TmleFluctuation):
        return {"eps0": v.eps0, "eps1": v.eps1}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


# ---------------------------------------------------------------------------
# Cross-fitting


def assign_folds(n: int, k: int, seed: int) -> np.ndarray:
    """Fold label per row: a seeded permutation taken modulo k."""
    if k < 2:
        raise ConfigError("need at least 2 folds")
    if n < 2 * k:
        raise ConfigError(f"{n} rows is too few for {k} folds")
    perm = rep_generator(seed, _FOLD_STREAM).permutation(n)
    fold = np.empty(n, dtype=int)
    fold[perm] = np.arange(n) % k
    return fold


def _ols_arm(dataset, arm, train, j):
    try:
        return fit_ols(dataset, arm, rows=train)
    except FoldInfeasibleError as exc:
        raise FoldInfeasibleError(f"fold {j}: {exc}", fold=j, arm=arm) from None


def _logistic_arm(dataset, arm, train, j):
    rows = train[dataset.W[train] == arm]
    if rows.size <= dataset.d + 1:
        raise FoldInfeasibleError(
            f"fold {j}: arm {arm} has {rows.size} training rows, needs more than {dataset.d + 1}",
            fold=j,
            arm=arm,
        )
    y = dataset.Y[rows]
    if y.min() == y.max():
        raise FoldInfeasibleError(f"fold {j}: arm {arm} outcomes are all {y[0]:g}", fold=j, arm=arm)
    return require_converged(fit_logistic_mle(dataset.X, dataset.Y, rows)), rows


class _FoldWork:
    """Lazily computed fits for one fold, shared by all requested methods."""

    def __init__(self, dataset: Dataset, train, j, platt_mode, holdout_fraction, seed, platt_intercept=True):
        self.ds = dataset
        self.platt_intercept = platt_intercept
        self.train = train
        self.j = j
        self.platt_mode = platt_mode
        self.holdout_fraction = holdout_fraction
        self.seed = seed
        self._cache = {}

    def _get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def propensity_mle(self):
        def build():
            W = self.ds.W.astype(float)
            w = W[self.train]
            if w.min() == w.max():
                raise FoldInfeasibleError(f"fold {self.j}: training rows contain one arm only", fold=self.j)
            return require_converged(fit_logistic_mle(self.ds.X, W, self.train))

        return self._get("pi_mle", build)

    def _loo(self, key, fit, y, rows):
        return self._get(("loo", key), lambda: loo_linear_predictors(fit, self.ds.X, y, rows)[0])

    def propensity(self, method):
        W = self.ds.W.astype(float)
        if method == "mle":
            return self.propensity_mle()
        if method == "platt":
            return self._get("pi_platt", lambda: self._platt("pi", W, self.train, self.propensity_mle))
        if method == "sloe":

            def build():
                fit = self.propensity_mle()
                return sloe_correct(fit, self.ds.X, W, self.train, z_loo=self._loo("pi", fit, W, self.train))

            return self._get("pi_sloe", build)
        raise ConfigError(f"no fitted propensity for method {method!r}")

    def _platt(self, key, y, rows, mle):
        if self.platt_mode == "loo":
            fit = mle()
            return platt_rescale_loo(
                self.ds.X, y, rows, fit=fit, z_loo=self._loo(key, fit, y, rows), scale_intercept=self.platt_intercept
            )
        if self.platt_mode != "holdout":
            raise ConfigError(f"unknown Platt mode {self.platt_mode!r}")
        rng = rep_generator(self.seed, _FOLD_STREAM - 1 - self.j)
        perm = rng.permutation(rows)
        n_val = max(1, int(round(self.holdout_fraction * rows.size)))
        val, fit_rows = perm[:n_val], np.sort(perm[n_val:])
        fit = require_converged(fit_logistic_mle(self.ds.X, y, fit_rows))
        return platt_rescale(fit, self.ds.X[val], y[val], scale_intercept=self.platt_intercept)

    def outcome(self, arm, method):
        ds = self.ds
        if ds.is_linear_outcome:
            return self._get(("ols", arm), lambda: _ols_arm(ds, arm, self.train, self.j))

        def mle():
            return self._get(("out_mle", arm), lambda: _logistic_arm(ds, arm, self.train, self.j))

        if method == "mle":
            return mle()[0]
        rows = mle()[1]
        if method == "platt":
            return self._get(("out_platt", arm), lambda: self._platt(arm, ds.Y, rows, lambda: mle()[0]))
        if method == "sloe":

            def build():
                fit = mle()[0]
                return sloe_correct(fit, ds.X, ds.Y, rows, z_loo=self._loo(arm, fit, ds.Y, rows))

            return self._get(("out_sloe", arm), build)
        raise ConfigError(f"no fitted outcome model for method {method!r}")


def _outcome_predictions(fit: Nuisance, X, arm, link, link_order, n_fit):
    if isinstance(fit, OracleNuisance):
        mu = fit.truth.outcome_mean(X, arm)
        return mu, mu
    lin = fit.linear_predictor(X)
    if fit.family == "gaussian":
        return lin, lin
    raw = expit(lin)
    if link == "corrected" and fit.correction.kind == "sloe":
        return corrected_link(lin, sigma_x2_estimate(fit, X, n_fit), link_order), raw
    return raw, raw


def crossfit_many(
    dataset: Dataset,
    methods,
    folds: int = 5,
    seed: int = 0,
    *,
    outcome_link: Literal["corrected", "raw"] = "corrected",
    link_order: int = 1,
    platt_mode: Literal["loo", "holdout"] = "loo",
    holdout_fraction: float = 0.1,
    platt_scale_intercept: bool = True,
    oracle_outcome_method: str | None = None,
) -> dict[str, NuisanceBundle]:
    """Cross-fit nuisances for several methods, sharing the per-fold MLE fits.

    Parameters
    ----------
    methods
        Subset of ``METHODS``.  ``propensity_oracle`` pairs the true
        propensity with fitted outcome models: least squares for linear
        outcomes, ``oracle_outcome_method`` (default ``"sloe"``) for binary
        outcomes.
    outcome_link
        For SLOE-corrected logistic outcome fits, use the noise-corrected link
        (``"corrected"``) or the plain sigmoid of the rescaled predictor.
    platt_mode
        ``"loo"`` rescales the full training-split MLE with leave-one-out
        scores; ``"holdout"`` refits on a random ``1 - holdout_fraction`` of
        the split and rescales on the rest.
    platt_scale_intercept
        Apply the Platt factor to the intercept as well as the slopes.
    """
    methods = list(dict.fromkeys(methods))
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown nuisance method {m!r}; expected one of {METHODS}")
        if m in ("propensity_oracle", "full_oracle") and dataset.truth is None:
            raise ConfigError(f"method {m!r} needs simulated data with known truth")
    if outcome_link not in ("corrected", "raw"):
        raise ConfigError(f"unknown outcome link {outcome_link!r}")
    if oracle_outcome_method is None:
        oracle_outcome_method = "mle" if dataset.is_linear_outcome else "sloe"
    if oracle_outcome_method not in ("mle", "platt", "sloe"):
        raise ConfigError("oracle_outcome_method must be mle, platt or sloe")

    n = dataset.n
    fold = assign_folds(n, folds, seed)
    splits = tuple((np.flatnonzero(fold != j), np.flatnonzero(fold == j)) for j in range(folds))
    family = "gaussian" if dataset.is_linear_outcome else "binomial"
    truth = dataset.truth
    arrays = {
        m: {k: np.empty(n) for k in ("pi", "mu1", "mu0", "mu1_raw", "mu0_raw", "ipc", "icc")} for m in methods
    }
    fits = {m: [] for m in methods}
    for j, (train, est) in enumerate(splits):
        if any(m != "full_oracle" for m in methods):
            # Check arm sizes before any fit so the error names the fold and arm.
            for arm in (1, 0):
                size = int(np.sum(dataset.W[train] == arm))
                if size <= dataset.d + 1:
                    raise FoldInfeasibleError(
                        f"fold {j}: arm {arm} has {size} training rows, needs more than {dataset.d + 1}",
                        fold=j,
                        arm=arm,
                    )
        work = _FoldWork(dataset, train, j, platt_mode, holdout_fraction, seed, platt_scale_intercept)
        Xe = dataset.X[est]
        for m in methods:
            a = arrays[m]
            if m in ("propensity_oracle", "full_oracle"):
                pfit = OracleNuisance(truth, "propensity")
                a["pi"][est] = truth.propensity(Xe)
            else:
                pfit = work.propensity(m)
                a["pi"][est] = expit(pfit.linear_predictor(Xe))
                if m == "sloe":
                    sx2 = sigma_x2_estimate(pfit, Xe, train.size)
                    a["ipc"][est] = inverse_propensity_corrected(pfit, sx2, Xe)
                    a["icc"][est] = inverse_control_propensity_corrected(pfit, sx2, Xe)
            outs = []
            for arm in (1, 0):
                if m == "full_oracle":
                    ofit = OracleNuisance(truth, f"outcome{arm}")
                else:
                    om = oracle_outcome_method if m == "propensity_oracle" else m
                    ofit = work.outcome(arm, om)
                n_fit = ofit.fit_meta.n_obs if isinstance(ofit, GlmFit) else None
                mu, raw = _outcome_predictions(ofit, Xe, arm, outcome_link, link_order, n_fit)
                a[f"mu{arm}"][est] = mu
                a[f"mu{arm}_raw"][est] = raw
                outs.append(ofit)
            fits[m].append(FoldFits(pfit, outs[0], outs[1]))

    bundles = {}
    for m in methods:
        a = arrays[m]
        for v in a.values():
            v.setflags(write=False)
        bundles[m] = NuisanceBundle(
            method=m,
            family=family,
            folds=splits,
            fits=tuple(fits[m]),
            pi=a["pi"],
            mu1=a["mu1"],
            mu0=a["mu0"],
            mu1_raw=a["mu1_raw"],
            mu0_raw=a["mu0_raw"],
            inv_pi_corrected=a["ipc"] if m == "sloe" else None,
            inv_ctrl_corrected=a["icc"] if m == "sloe" else None,
            outcome_link=outcome_link if family == "binomial" else "identity",
        )
    return bundles


def crossfit(dataset: Dataset, folds: int = 5, nuisance_method: str = "mle", seed: int = 0, **kwargs) -> NuisanceBundle:
    return crossfit_many(dataset, [nuisance_method], folds, seed, **kwargs)[nuisance_method]


def oracle_bundle(dataset: Dataset) -> NuisanceBundle:
    """True nuisances on a single fold covering every row."""
    truth = dataset.truth
    if truth is None:
        raise ConfigError("oracle estimators need simulated data with known truth")
    X = dataset.X
    mu1 = truth.outcome_mean(X, 1)
    mu0 = truth.outcome_mean(X, 0)
    rows = np.arange(dataset.n)
    return NuisanceBundle(
        method="full_oracle",
        family="gaussian" if dataset.is_linear_outcome else "binomial",
        folds=((np.array([], dtype=int), rows),),
        fits=(FoldFits(OracleNuisance(truth, "propensity"), OracleNuisance(truth, "outcome1"), OracleNuisance(truth, "outcome0")),),
        pi=truth.propensity(X),
        mu1=mu1,
        mu0=mu0,
        mu1_raw=mu1,
        mu0_raw=mu0,
    )


# ---------------------------------------------------------------------------
# Estimators


def compute_tn(pi, W) -> tuple[float, float]:
    """Treated and control ratios ``mean(1/pi) / mean(W/pi^2)`` and analogue."""
    pi = np.asarray(pi, dtype=float)
    W = np.asarray(W, dtype=float)
    if pi.size == 0 or W.sum() == 0 or W.sum() == W.size:
        raise ConfigError("T_n needs at least one unit in each arm")
    treated = np.mean(1.0 / pi) / np.mean(W / pi**2)
    control = np.mean(1.0 / (1.0 - pi)) / np.mean((1.0 - W) / (1.0 - pi) ** 2)
    return float(treated), float(control)


def _check_propensity(pi):
    if np.any(~np.isfinite(pi)) or np.any(pi <= 0.0) or np.any(pi >= 1.0):
        bad = int(np.sum((pi <= 0.0) | (pi >= 1.0) | ~np.isfinite(pi)))
        raise DegeneratePropensityError(f"{bad} propensity predictions are 0 or 1 at machine precision")


def _diagnostics(dataset, bundle, check=True) -> dict:
    pi = bundle.pi
    out = {"min_propensity": float(pi.min()), "max_propensity": float(pi.max())}
    if check and np.all((pi > 0) & (pi < 1)):
        try:
            out["t_n_treated"], out["t_n_control"] = compute_tn(pi, dataset.W)
        except ConfigError:
            pass
    return out


def _result(name, psi, bundle, dataset, extra=None) -> EstimateResult:
    per_fold = np.array([psi[est].mean() for _, est in bundle.folds])
    diag = _diagnostics(dataset, bundle)
    if extra:
        diag.update(extra)
    return EstimateResult(name, float(psi.mean()), per_fold, bundle.fold_sizes, bundle.method, diag)


def _check_rows(dataset, bundle):
    if bundle.n != dataset.n:
        raise ConfigError("bundle and dataset have different row counts")


def gcomputation(dataset: Dataset, bundle: NuisanceBundle, link: Literal["configured", "raw"] = "configured") -> EstimateResult:
    """Mean imputed contrast.  ``link="raw"`` uses the plain inverse-link predictions."""
    _check_rows(dataset, bundle)
    if link == "raw":
        return _result("gcomp_raw_link", bundle.mu1_raw - bundle.mu0_raw, bundle, dataset)
    if link != "configured":
        raise ConfigError(f"unknown link {link!r}")
    return _result("gcomp", bundle.mu1 - bundle.mu0, bundle, dataset)


def ipw(
    dataset: Dataset,
    bundle: NuisanceBundle,
    normalization: Literal["horvitz_thompson", "hajek"] = "horvitz_thompson",
    corrected: bool = False,
    clip: float | None = None,
) -> EstimateResult:
    """Inverse propensity weighting.

    ``corrected=True`` swaps ``1/pi`` and ``1/(1-pi)`` for their Jensen-gap
    corrected versions (SLOE propensity only).  ``clip`` bounds the
    propensities to ``[clip, 1-clip]``; it is off by default.
    """
    _check_rows(dataset, bundle)
    W = dataset.W.astype(float)
    Y = dataset.Y
    if corrected:
        if bundle.inv_pi_corrected is None:
            raise ConfigError("corrected IPW needs SLOE propensity fits")
        inv1, inv0 = bundle.inv_pi_corrected, bundle.inv_ctrl_corrected
    else:
        pi = bundle.pi
        if clip is not None:
            if not 0 < clip < 0.5:
                raise ConfigError("clip must lie in (0, 0.5)")
            pi = np.clip(pi, clip, 1 - clip)
        else:
            _check_propensity(pi)
        inv1, inv0 = 1.0 / pi, 1.0 / (1.0 - pi)
    w1 = W * inv1
    w0 = (1.0 - W) * inv0
    if normalization == "horvitz_thompson":
        psi = w1 * Y - w0 * Y
    elif normalization == "hajek":
        psi = np.empty(dataset.n)
        for _, est in bundle.folds:
            s1, s0 = w1[est].sum(), w0[est].sum()
            if s1 == 0 or s0 == 0:
                raise ConfigError("Hajek weights need both arms in every fold")
            psi[est] = est.size * (w1[est] * Y[est] / s1 - w0[est] * Y[est] / s0)
    else:
        raise ConfigError(f"unknown normalization {normalization!r}")
    name = "ipw_corrected" if corrected else "ipw"
    return _result(name, psi, bundle, dataset, {"normalization": normalization})


def _aipw_psi(dataset, bundle):
    pi = bundle.pi
    _check_propensity(pi)
    W = dataset.W.astype(float)
    mu_w = np.where(W == 1, bundle.mu1, bundle.mu0)
    return bundle.mu1 - bundle.mu0 + (W - pi) / (pi * (1.0 - pi)) * (dataset.Y - mu_w)


def aipw(dataset: Dataset, bundle: NuisanceBundle) -> EstimateResult:
    _check_rows(dataset, bundle)
    return _result("aipw", _aipw_psi(dataset, bundle), bundle, dataset)


def aipw_oracle(dataset: Dataset, bundle: NuisanceBundle | None = None) -> EstimateResult:
    """AIPW with the true outcome means and propensity; no cross-fitting."""
    b = oracle_bundle(dataset)
    return _result("aipw_oracle", _aipw_psi(dataset, b), b, dataset)


def tmle_gaussian(dataset: Dataset, bundle: NuisanceBundle) -> EstimateResult:
    """One-step least-squares fluctuation along ``W/pi`` and ``(1-W)/(1-pi)`` per fold."""
    _check_rows(dataset, bundle)
    pi = bundle.pi
    _check_propensity(pi)
    W = dataset.W.astype(float)
    Y = dataset.Y
    psi = np.empty(dataset.n)
    flucts = []
    for j, (_, est) in enumerate(bundle.folds):
        p, w, y = pi[est], W[est], Y[est]
        m1, m0 = bundle.mu1[est], bundle.mu0[est]
        d1 = np.sum(w / p**2)
        d0 = np.sum((1 - w) / (1 - p) ** 2)
        if d1 == 0 or d0 == 0:
            raise NumericalError(f"fold {j} lacks treated or control units")
        eps1 = np.sum(w / p * (y - m1)) / d1
        eps0 = np.sum((1 - w) / (1 - p) * (y - m0)) / d0
        psi[est] = (m1 + eps1 / p) - (m0 + eps0 / (1 - p))
        flucts.append(TmleFluctuation(float(eps0), float(eps1)))
    return _result("tmle_gaussian", psi, bundle, dataset, {"fluctuations": flucts})


def _fluctuation_newton(offset, H, y, tol=1e-10, max_iter=100):
    """Maximize the binomial likelihood of ``sigmoid(offset + H @ eps)``."""
    eps = np.zeros(H.shape[1])
    m = y.size

    def nll(e):
        z = offset + H @ e
        return float(np.mean(np.logaddexp(0.0, z) - y * z))

    f = nll(eps)
    for _ in range(max_iter):
        mu = expit(offset + H @ eps)
        grad = H.T @ (mu - y) / m
        if np.max(np.abs(grad)) <= tol:
            return eps
        hess = (H * (mu * (1 - mu))[:, None]).T @ H / m
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            raise ConvergenceError("fluctuation Hessian is singular") from None
        if 0.5 * float(grad @ step) <= 1e-14 * max(1.0, abs(f)):
            # Below the objective's rounding level: plain Newton is safe here.
            eps = eps - step
            f = nll(eps)
            continue
        s = 1.0
        while s > 1e-12:
            cand = eps - s * step
            fc = nll(cand)
            if fc <= f:
                break
            s *= 0.5
        else:
            # No descent: at the optimum to machine precision.
            return eps
        eps, f = cand, fc
    raise ConvergenceError("binomial fluctuation did not converge")


def tmle_binomial(dataset: Dataset, bundle: NuisanceBundle) -> EstimateResult:
    """Logistic fluctuation offset by the initial outcome logits, per fold.

    The offset uses the plain inverse-link predictions (``mu*_raw``), the
    only ones guaranteed to be probabilities.
    """
    _check_rows(dataset, bundle)
    if not dataset.is_binary_outcome:
        raise ConfigError("binomial TMLE needs binary outcomes")
    pi = bundle.pi
    _check_propensity(pi)
    m1, m0 = bundle.mu1_raw, bundle.mu0_raw
    for m in (m1, m0):
        if np.any(m <= 0.0) or np.any(m >= 1.0):
            raise NumericalError("outcome predictions reached 0 or 1; logits are undefined")
    W = dataset.W.astype(float)
    Y = dataset.Y
    psi = np.empty(dataset.n)
    flucts = []
    for _, est in bundle.folds:
        p, w = pi[est], W[est]
        h1, h0 = 1.0 / p, 1.0 / (1.0 - p)
        l1, l0 = logit(m1[est]), logit(m0[est])
        offset = np.where(w == 1, l1, l0)
        H = np.column_stack([w * h1, (1 - w) * h0])
        eps1, eps0 = _fluctuation_newton(offset, H, Y[est])
        psi[est] = expit(l1 + eps1 * h1) - expit(l0 + eps0 * h0)
        flucts.append(TmleFluctuation(float(eps0), float(eps1)))
    return _result("tmle_binomial", psi, bundle, dataset, {"fluctuations": flucts})


ESTIMATORS: dict[str, Callable[[Dataset, NuisanceBundle], EstimateResult]] = {
    "gcomp": gcomputation,
    "ipw": ipw,
    "ipw_corrected": lambda ds, b: ipw(ds, b, corrected=True),
    "aipw": aipw,
    "aipw_oracle": aipw_oracle,
    "tmle_gaussian": tmle_gaussian,
    "tmle_binomial": tmle_binomial,
    # Reporting variant: G-computation through the plain sigmoid.
    "gcomp_raw_link": lambda ds, b: gcomputation(ds, b, link="raw"),
}


def estimate(name: str, dataset: Dataset, bundle: NuisanceBundle, **kwargs) -> EstimateResult:
    if name not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {name!r}; expected one of {ESTIMATOR_NAMES}")
    if kwargs:
        if name not in ("ipw", "ipw_corrected"):
            raise ConfigError(f"estimator {name!r} takes no options")
        return ipw(dataset, bundle, corrected=(name == "ipw_corrected"), **kwargs)
    return ESTIMATORS[name](dataset, bundle)
