"""Monte Carlo experiment runner, table presets and calibration reports."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from hdate.errors import ConfigError, HdateError, NumericalError
from hdate.estimators import (
    ESTIMATOR_NAMES,
    ESTIMATORS,
    METHODS,
    EstimateResult,
    crossfit,
    crossfit_many,
    estimate,
    oracle_bundle,
)
from hdate.nuisance import (
    GlmFit,
    fit_logistic_mle,
    platt_rescale,
    platt_rescale_loo,
    predict,
    sigma_x2_estimate,
    sloe_correct,
)
from hdate.simcore import SimulationConfig, TrueParams, load_dataset, rep_generator, simulate, true_ate, true_params

CSV_HEADER = ("nuisance", "estimator", "bias", "std_err", "reps_used", "reps_failed", "mc_se")
ORACLE_ROW = "oracle"


class AllRepsFailedError(NumericalError):
    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = tuple(rows)


def external_name(name: str) -> str:
    """Hyphenated spelling used in CSV reports and on the command line."""
    return "oracle" if name == "full_oracle" else name.replace("_", "-")


def internal_name(name: str) -> str:
    return "full_oracle" if name == "oracle" else name.replace("-", "_")


# ---------------------------------------------------------------------------
# Reports


@dataclass(frozen=True)
class ReportRow:
    nuisance_method: str
    estimator: str
    bias: float
    std_err: float
    n_reps_used: int
    n_reps_failed: int
    mc_se_of_bias: float
    failures: dict = field(default_factory=dict, compare=False)

    def csv_fields(self) -> list[str]:
        return [
            external_name(self.nuisance_method),
            external_name(self.estimator),
            repr(self.bias),
            repr(self.std_err),
            str(self.n_reps_used),
            str(self.n_reps_failed),
            repr(self.mc_se_of_bias),
        ]


@dataclass(frozen=True)
class MonteCarloReport:
    """Per-row moments of the estimates across replicates.

    ``estimates`` maps ``(method, estimator)`` to the per-rep values, NaN
    where the rep failed; ``t_n`` holds the per-rep treated and control T_n of
    each method's cross-fitted propensities.
    """

    rows: tuple[ReportRow, ...]
    config: SimulationConfig
    truth: float
    estimates: dict = field(default_factory=dict, compare=False, repr=False)
    t_n: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def nominal_kappa(self) -> float:
        return self.config.kappa

    @property
    def effective_kappa(self) -> float:
        return self.config.effective_kappa

    def row(self, method: str, estimator: str) -> ReportRow:
        method, estimator = internal_name(method), internal_name(estimator)
        if method == "full_oracle" and estimator == "aipw_oracle":
            method = ORACLE_ROW
        for r in self.rows:
            if r.nuisance_method == method and r.estimator == estimator:
                return r
        raise KeyError((method, estimator))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in self.rows:
            writer.writerow(r.csv_fields())
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "truth": self.truth,
            "nominal_kappa": self.nominal_kappa,
            "effective_kappa": self.effective_kappa,
            "rows": [
                {
                    "nuisance": external_name(r.nuisance_method),
                    "estimator": external_name(r.estimator),
                    "bias": r.bias,
                    "std_err": r.std_err,
                    "reps_used": r.n_reps_used,
                    "reps_failed": r.n_reps_failed,
                    "mc_se": r.mc_se_of_bias,
                    "failures": dict(r.failures),
                }
                for r in self.rows
            ],
        }


def _summarize(method, est, values, reasons, truth) -> ReportRow:
    values = np.asarray(values, dtype=float)
    ok = values[np.isfinite(values)]
    used = int(ok.size)
    if used:
        bias = float(ok.mean() - truth)
        sd = float(ok.std(ddof=1)) if used > 1 else math.nan
        mc = sd / math.sqrt(used) if used > 1 else math.nan
    else:
        bias = sd = mc = math.nan
    counts: dict[str, int] = {}
    for r in reasons:
        if r is not None:
            counts[r] = counts.get(r, 0) + 1
    return ReportRow(method, est, bias, sd, used, int(values.size - used), mc, counts)


# ---------------------------------------------------------------------------
# Monte Carlo


def plan_rows(methods, estimators, binary_outcome: bool) -> list[tuple[str, str]]:
    """Well-formed ``(method, estimator)`` pairs in report order.

    The corrected IPW and the raw-link G-computation are only reported for
    SLOE nuisances.  The binomial TMLE needs binary outcomes.  The oracle AIPW
    contributes one row of its own.
    """
    methods = [internal_name(m) for m in methods]
    estimators = [internal_name(e) for e in estimators]
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown nuisance method {m!r}")
    for e in estimators:
        if e not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {e!r}")
    pairs = []
    for m in methods:
        for e in estimators:
            if e == "aipw_oracle":
                continue
            if e in ("ipw_corrected", "gcomp_raw_link") and m != "sloe":
                continue
            if e == "tmle_binomial" and not binary_outcome:
                continue
            pairs.append((m, e))
    if "aipw_oracle" in estimators:
        pairs.append((ORACLE_ROW, "aipw_oracle"))
    if not pairs:
        raise ConfigError("no well-formed (method, estimator) combinations requested")
    return pairs


def _failure(exc: Exception) -> str:
    return type(exc).__name__


def run_rep(config: SimulationConfig, pairs, rep: int, crossfit_options=None):
    """One replicate: simulate, cross-fit every method, evaluate each pair.

    Returns ``{pair: (estimate or None, failure reason or None)}`` and the
    per-method ``(T_n treated, T_n control)``.  Package errors mark the
    affected pairs as failed; anything else propagates.
    """
    opts = dict(crossfit_options or {})
    data = simulate(config, rep)
    methods = [m for m in dict.fromkeys(m for m, _ in pairs) if m != ORACLE_ROW]
    bundles, fail = {}, {}
    try:
        if methods:
            bundles = crossfit_many(data, methods, config.folds, config.seed, **opts)
    except HdateError:
        # Isolate the failing methods; the others keep their results.
        for m in methods:
            try:
                bundles.update(crossfit_many(data, [m], config.folds, config.seed, **opts))
            except HdateError as exc:
                fail[m] = _failure(exc)
    out, tn = {}, {}
    for m, e in pairs:
        if m in fail:
            out[(m, e)] = (None, fail[m])
            continue
        try:
            if m == ORACLE_ROW:
                res = estimate(e, data, oracle_bundle(data))
            else:
                res = estimate(e, data, bundles[m])
        except HdateError as exc:
            out[(m, e)] = (None, _failure(exc))
            continue
        out[(m, e)] = (res.estimate, None)
        if m not in tn and "t_n_treated" in res.diagnostics:
            tn[m] = (res.diagnostics["t_n_treated"], res.diagnostics["t_n_control"])
    return out, tn


def _run_chunk(args):
    config, pairs, reps, opts = args
    return [run_rep(config, pairs, r, opts) for r in reps]


def run_monte_carlo(
    config: SimulationConfig,
    methods,
    estimators,
    parallelism: int = 1,
    *,
    n_reps: int | None = None,
    crossfit_options: dict | None = None,
    allow_failed_rows: bool = False,
    progress=None,
) -> MonteCarloReport:
    """Run ``n_reps`` (default ``config.n_reps``) replicates of every well-formed pair.

    Reps are distributed over ``parallelism`` worker processes in contiguous
    chunks and merged by rep index, so the report does not depend on the
    worker count.  Raises :class:`AllRepsFailedError` when some row has no
    successful rep unless ``allow_failed_rows``.
    """
    if parallelism < 1:
        raise ConfigError("parallelism must be at least 1")
    n_reps = config.n_reps if n_reps is None else n_reps
    if n_reps > config.n_reps:
        config = config.replace(n_reps=n_reps)
    if n_reps < 1:
        raise ConfigError("need at least one rep")
    params = true_params(config)
    pairs = plan_rows(methods, estimators, config.family == "logistic")
    opts = dict(crossfit_options or {})
    reps = list(range(n_reps))
    if parallelism == 1:
        results = []
        for r in reps:
            results.append(run_rep(config, pairs, r, opts))
            if progress is not None:
                progress(r + 1, n_reps)
    else:
        chunks = [c.tolist() for c in np.array_split(np.array(reps), min(parallelism * 4, n_reps)) if c.size]
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = [res for chunk in pool.map(_run_chunk, [(config, pairs, c, opts) for c in chunks]) for res in chunk]

    truth = true_ate(params)
    estimates, rows = {}, []
    for pair in pairs:
        vals = np.array([np.nan if res[0][pair][0] is None else res[0][pair][0] for res in results])
        reasons = [res[0][pair][1] for res in results]
        vals.setflags(write=False)
        estimates[pair] = vals
        rows.append(_summarize(*pair, vals, reasons, truth))
    tn = {}
    for m in dict.fromkeys(p[0] for p in pairs):
        if m == ORACLE_ROW:
            continue
        tn[m] = np.array([res[1].get(m, (np.nan, np.nan)) for res in results])
    report = MonteCarloReport(tuple(rows), config, truth, estimates, tn)
    dead = [(r.nuisance_method, r.estimator) for r in rows if r.n_reps_used == 0]
    if dead and not allow_failed_rows:
        raise AllRepsFailedError(
            "all reps failed for " + ", ".join(f"{external_name(m)}/{external_name(e)}" for m, e in dead), dead
        )
    return report


# ---------------------------------------------------------------------------
# Table presets


@dataclass(frozen=True)
class TablePreset:
    table_id: int
    config: SimulationConfig
    methods: tuple[str, ...]
    estimators: tuple[str, ...]


_LINEAR_ESTIMATORS = ("gcomp", "ipw", "ipw_corrected", "aipw", "tmle_gaussian", "aipw_oracle")
_BINARY_ESTIMATORS = (
    "gcomp",
    "gcomp_raw_link",
    "ipw",
    "ipw_corrected",
    "aipw",
    "tmle_gaussian",
    "tmle_binomial",
    "aipw_oracle",
)

_PRESETS = {
    1: TablePreset(1, SimulationConfig(n=4000, d=8), ("mle", "platt", "propensity_oracle"), _LINEAR_ESTIMATORS),
    2: TablePreset(
        2, SimulationConfig(n=4000, d=320), ("mle", "platt", "sloe", "propensity_oracle"), _LINEAR_ESTIMATORS
    ),
    3: TablePreset(
        3,
        SimulationConfig(n=8000, d=640, family="logistic"),
        ("mle", "platt", "sloe", "propensity_oracle"),
        _BINARY_ESTIMATORS,
    ),
}

# Same aspect ratio, a quarter of the rows.
_DESK = {1: dict(n=1000, d=8), 2: dict(n=1000, d=80), 3: dict(n=2000, d=160)}


def table_preset(table_id: int, desk: bool = False) -> TablePreset:
    if table_id not in _PRESETS:
        raise ConfigError(f"table_id must be 1, 2 or 3, got {table_id!r}")
    p = _PRESETS[table_id]
    if desk:
        p = TablePreset(p.table_id, p.config.replace(**_DESK[table_id]), p.methods, p.estimators)
    return p


def replicate_table(
    table_id: int, reps: int = 1000, out=None, *, desk: bool = False, parallelism: int = 1, seed: int = 0, progress=None
) -> MonteCarloReport:
    """Run a table preset with ``reps`` replicates and optionally write the CSV."""
    p = table_preset(table_id, desk)
    config = p.config.replace(n_reps=reps, seed=seed)
    report = run_monte_carlo(config, p.methods, p.estimators, parallelism, progress=progress)
    if out is not None:
        report.write_csv(out)
    return report


# ---------------------------------------------------------------------------
# Calibration and coefficient reports


@dataclass(frozen=True)
class CalibrationBin:
    mean_predicted: float
    mean_observed: float
    count: int


@dataclass(frozen=True)
class CalibrationTable:
    bins: tuple[CalibrationBin, ...]
    recalibration_slope: float = math.nan

    @property
    def n(self) -> int:
        return sum(b.count for b in self.bins)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bin", "mean_predicted", "mean_observed", "count"])
        for i, b in enumerate(self.bins):
            writer.writerow([i, repr(b.mean_predicted), repr(b.mean_observed), b.count])
        return buf.getvalue()


def calibration_table(p, y, n_bins: int) -> CalibrationTable:
    """Equal-count bins of predictions ``p`` with the observed frequency of ``y``.

    Ties are broken by position (stable sort), and the first ``n mod n_bins``
    bins take one extra row.
    """
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    if p.shape != y.shape or p.ndim != 1:
        raise ConfigError("predictions and outcomes must be vectors of equal length")
    if n_bins < 2:
        raise ConfigError("need at least 2 bins")
    if n_bins > p.size:
        raise ConfigError(f"{n_bins} bins would leave some empty with {p.size} evaluation rows")
    order = np.argsort(p, kind="stable")
    bins = tuple(
        CalibrationBin(float(p[idx].mean()), float(y[idx].mean()), int(idx.size)) for idx in np.array_split(order, n_bins)
    )
    return CalibrationTable(bins)


def recalibration_slope(z, y) -> float:
    """Slope of a logistic regression of ``y`` on the fitted logit ``z``.

    One for calibrated scores; below one for over-confident ones.
    """
    z = np.asarray(z, dtype=float)
    fit = fit_logistic_mle(z[:, None], np.asarray(y, dtype=float))
    return float(fit.coefficients[0])


def _effective_logit(fit: GlmFit, X):
    return fit.linear_predictor(np.asarray(X, dtype=float))


def calibration_report(fit: GlmFit, eval_X, eval_Y, n_bins: int = 10, mode: str = "raw") -> CalibrationTable:
    """Reliability table of a binomial fit on independent evaluation rows."""
    if fit.family != "binomial":
        raise ConfigError("calibration needs a binomial fit")
    eval_X = np.asarray(eval_X, dtype=float)
    if eval_X.ndim != 2 or eval_X.shape[1] != fit.d:
        raise ConfigError(f"evaluation covariates must have {fit.d} columns")
    p = predict(fit, eval_X, mode=mode)
    table = calibration_table(p, eval_Y, n_bins)
    slope = recalibration_slope(_effective_logit(fit, eval_X), eval_Y)
    return CalibrationTable(table.bins, slope)


@dataclass(frozen=True)
class CoefficientReport:
    index: np.ndarray
    true_coef: np.ndarray
    estimated_coef: np.ndarray
    slope: float
    degenerate: bool

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["index", "true_coef", "estimated_coef"])
        for i, t, e in zip(self.index, self.true_coef, self.estimated_coef):
            writer.writerow([int(i), repr(float(t)), repr(float(e))])
        return buf.getvalue()


def coefficient_slope(true_coef, estimated_coef) -> tuple[float, bool]:
    """Least-squares slope through the origin of estimated on true coefficients."""
    t = np.asarray(true_coef, dtype=float)
    e = np.asarray(estimated_coef, dtype=float)
    if t.shape != e.shape:
        raise ConfigError(f"dimension mismatch: {t.shape} vs {e.shape}")
    tt = float(t @ t)
    if tt == 0.0:
        return math.nan, True
    return float(t @ e) / tt, False


def coefficient_report(fit: GlmFit, truth, out=None, which: str = "eta") -> CoefficientReport:
    """Per-coordinate (true, estimated) pairs and the regression slope.

    ``truth`` is a :class:`TrueParams` (``which`` picks the coefficient
    vector) or a plain vector.  The estimate uses the fit's corrected
    coefficients.
    """
    true_coef = getattr(truth, which) if isinstance(truth, TrueParams) else np.asarray(truth, dtype=float)
    est = fit.effective()[0]
    slope, degenerate = coefficient_slope(true_coef, est)
    rep = CoefficientReport(np.arange(1, est.size + 1), np.asarray(true_coef, dtype=float), est, slope, degenerate)
    if out is not None:
        Path(out).write_text(rep.to_csv(), encoding="utf-8")
    return rep


CORRECTIONS = ("mle", "platt", "sloe")


def corrected_propensity_fit(X, W, method: str, *, platt_mode: str = "loo", holdout_fraction: float = 0.1, rng=None):
    """Full-sample logistic fit of W on X with the named post-hoc correction."""
    if method not in CORRECTIONS:
        raise ConfigError(f"method must be one of {CORRECTIONS}, got {method!r}")
    if method == "platt" and platt_mode == "holdout":
        n = X.shape[0]
        perm = (rng or np.random.default_rng(0)).permutation(n)
        n_val = max(1, int(round(holdout_fraction * n)))
        fit = fit_logistic_mle(X, W, perm[n_val:])
        return platt_rescale(fit, X[perm[:n_val]], W[perm[:n_val]])
    fit = fit_logistic_mle(X, W)
    if method == "platt":
        return platt_rescale_loo(X, W, fit=fit)
    if method == "sloe":
        return sloe_correct(fit, X, W)
    return fit


@dataclass(frozen=True)
class CalibrationExperiment:
    table: CalibrationTable
    slopes: np.ndarray

    @property
    def mean_slope(self) -> float:
        return float(np.mean(self.slopes))


def calibration_experiment(
    config: SimulationConfig,
    method: str,
    n_bins: int = 10,
    n_eval: int = 100_000,
    reps: int = 1,
    *,
    mode: str = "raw",
    platt_mode: str = "loo",
    chunk: int = 10_000,
) -> CalibrationExperiment:
    """Fit the propensity on rep r of ``config`` and score fresh draws.

    The evaluation rows come from an independent stream and are generated in
    chunks so ``n_eval * d`` never has to fit in memory.  The table pools the
    predictions of all reps; ``slopes`` holds one recalibration slope per rep.
    """
    params = true_params(config)
    stream = rep_generator(config.seed ^ 0x9E3779B97F4A7C15, 0)
    preds, logits, ys, slopes = [], [], [], []
    for r in range(reps):
        data = simulate(config.replace(n_reps=max(config.n_reps, reps)), r)
        fit = corrected_propensity_fit(data.X, data.W.astype(float), method, platt_mode=platt_mode, rng=rep_generator(config.seed, r))
        z_all, p_all, y_all = [], [], []
        for start in range(0, n_eval, chunk):
            m = min(chunk, n_eval - start)
            Xe = stream.standard_normal((m, config.d))
            ye = (stream.random(m) < expit(Xe @ params.eta)).astype(float)
            z_all.append(_effective_logit(fit, Xe))
            if mode == "corrected":
                p_all.append(predict(fit, Xe, mode="corrected", sigma_x2=sigma_x2_estimate(fit, Xe, data.n)))
            else:
                p_all.append(expit(z_all[-1]))
            y_all.append(ye)
        z, p, y = map(np.concatenate, (z_all, p_all, y_all))
        slopes.append(recalibration_slope(z, y))
        preds.append(p)
        logits.append(z)
        ys.append(y)
    p, z, y = map(np.concatenate, (preds, logits, ys))
    table = calibration_table(p, y, n_bins)
    return CalibrationExperiment(CalibrationTable(table.bins, float(np.mean(slopes))), np.array(slopes))


def coefficient_experiment(config: SimulationConfig, method: str, reps: int = 20) -> np.ndarray:
    """Coefficient slopes of the corrected propensity fit over ``reps`` simulated datasets."""
    params = true_params(config)
    cfg = config.replace(n_reps=max(config.n_reps, reps))
    out = []
    for r in range(reps):
        data = simulate(cfg, r)
        fit = corrected_propensity_fit(data.X, data.W.astype(float), method, rng=rep_generator(config.seed, r))
        out.append(coefficient_report(fit, params).slope)
    return np.array(out)


# ---------------------------------------------------------------------------
# Real-data entry point


def estimate_from_file(
    data,
    nuisance_method: str = "mle",
    estimator: str = "aipw",
    folds: int = 5,
    seed: int = 0,
    **flags,
) -> EstimateResult:
    """Cross-fit and estimate on a CSV with header ``w,y,x1,...,xd``.

    ``flags`` are forwarded to the cross-fitting step (``outcome_link``,
    ``platt_mode`` and so on).  Oracle methods need known truth and are
    rejected.
    """
    method = internal_name(nuisance_method)
    est = internal_name(estimator)
    if est not in ESTIMATOR_NAMES:
        raise ConfigError(f"unknown estimator {estimator!r}")
    if est == "aipw_oracle" or method in ("full_oracle", "propensity_oracle"):
        raise ConfigError(
            "oracle nuisances need the true data-generating model, which an ingested file does not carry; "
            "use mle, platt or sloe"
        )
    dataset = data if not isinstance(data, (str, Path)) else load_dataset(data)
    bundle = crossfit(dataset, folds, method, seed, **flags)
    return estimate(est, dataset, bundle)
