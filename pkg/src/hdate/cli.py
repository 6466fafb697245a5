"""Command-line entry point: ``hdate {simulate,estimate,replicate,calibrate,theory}``.

Exit codes: 0 on success, 2 for configuration or input errors, 3 for
numerical failures.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from hdate.errors import ConfigError, NumericalError
from hdate.harness import (
    CORRECTIONS,
    calibration_experiment,
    estimate_from_file,
    external_name,
    replicate_table,
)
from hdate.estimators import ESTIMATOR_NAMES, METHODS
from hdate.simcore import SimulationConfig, simulate, write_dataset
from hdate import theory

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _emit(text: str, out) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _json(obj) -> str:
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return None
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        return v

    return json.dumps(clean(obj), indent=2) + "\n"


def cmd_simulate(args) -> int:
    config = SimulationConfig.from_json(args.config)
    write_dataset(simulate(config, args.rep), args.out)
    return EXIT_OK


def cmd_estimate(args) -> int:
    flags = {}
    if args.outcome_link:
        flags["outcome_link"] = args.outcome_link
    if args.platt_mode:
        flags["platt_mode"] = args.platt_mode
    res = estimate_from_file(args.data, args.nuisance, args.estimator, args.folds, args.seed, **flags)
    _emit(_json(res.to_dict()), args.out)
    return EXIT_OK


def cmd_replicate(args) -> int:
    def progress(done, total):
        if args.verbose:
            print(f"rep {done}/{total}", file=sys.stderr)

    report = replicate_table(
        args.table, args.reps, None, desk=args.desk, parallelism=args.parallelism, seed=args.seed, progress=progress
    )
    _emit(report.to_csv(), args.out)
    summary = {
        "truth": report.truth,
        "nominal_kappa": report.nominal_kappa,
        "effective_kappa": report.effective_kappa,
        "n": report.config.n,
        "d": report.config.d,
    }
    print(json.dumps(summary), file=sys.stderr)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    config = SimulationConfig.from_json(args.config)
    if config.family != "logistic":
        config = config.replace(family="logistic")
    exp = calibration_experiment(
        config, args.method, args.bins, args.n_eval, args.reps, mode=args.mode, platt_mode=args.platt_mode
    )
    _emit(exp.table.to_csv(), args.out)
    print(json.dumps({"method": args.method, "recalibration_slope": exp.mean_slope}), file=sys.stderr)
    return EXIT_OK


def _theory_sur_candes(a):
    from hdate.nuisance import solve_sur_candes_system

    p = solve_sur_candes_system(a.kappa, a.gamma2)
    return {"alpha": p.alpha, "sigma_star": p.sigma_star, "lambda": p.lam, "kappa": p.kappa, "gamma2": p.gamma2}


def _theory_gcomp_variance(a):
    v = theory.gcomp_asymptotic_variance(
        a.kappa, a.sigma2, a.beta_diff_norm2, a.p, a.p11, a.p10, a.mean_x_norm2
    )
    return {"variance": v}


def _eta(d, gamma2):
    return np.full(d, math.sqrt(gamma2 / d))


def _theory_efficiency_bound(a):
    b1 = np.full(a.d, math.sqrt(9.0 / a.d))
    b0 = np.full(a.d, math.sqrt(4.0 / a.d))
    v = theory.efficiency_bound(b1, b0, np.eye(a.d), _eta(a.d, a.gamma2), a.sigma2, a.n_mc, a.seed)
    return {"bound": v.value, "se": v.se, "n_mc": v.n_mc}


def _theory_wishart(a):
    return theory.wishart_symmetry_check(a.n, a.d, _eta(a.d, a.gamma2), a.n_mc, a.seed).to_dict()


def _theory_floor(a):
    grid = [int(v) for v in a.n_grid.split(",")]
    rows = theory.prediction_variance_floor(a.kappa, grid, a.reps, a.seed, fixed_d=a.fixed_d)
    return {"rows": [r.to_dict() for r in rows]}


def _theory_ols_arm(a):
    v = theory.ols_arm_variance(a.n, a.d, a.gamma2, a.reps, a.seed)
    return {"variance": v.value, "se": v.se, "theory": 1.0 / (a.n - a.d - 1), "reps": v.n_mc}


def _theory_exact_beta(a):
    V = theory.exact_beta_variance(np.eye(a.d), a.n, a.d, a.sigma2)
    return {"coordinate_variance": float(V[0, 0]), "d": a.d, "N": a.n}


def _theory_sigma_z(a):
    return theory.estimate_sigma_z(_eta(a.d, a.gamma2), a.arm, a.n_mc, a.seed).to_dict()


def _theory_gcomp_decomposition(a):
    # Isotropic design; per-arm OLS variances from the exact inverse moment.
    b1 = np.full(a.d, math.sqrt(9.0 / a.d))
    b0 = np.full(a.d, math.sqrt(4.0 / a.d))
    I = np.eye(a.d)
    V = theory.exact_beta_variance(I, a.n1, a.d, a.sigma2) + theory.exact_beta_variance(I, a.n0, a.d, a.sigma2)
    return theory.gcomp_variance(b1, b0, I, V, np.full(a.d, a.mean_x), a.n).to_dict()


def _theory_aipw_remainder(a):
    I = np.eye(a.d)
    eta = _eta(a.d, a.gamma2)
    S1 = theory.estimate_sigma_z(eta, 1, a.n_mc, a.seed).mean
    S0 = theory.estimate_sigma_z(eta, 0, a.n_mc, a.seed).mean
    v = theory.aipw_remainder_variance(
        theory.exact_beta_variance(I, a.n1, a.d, a.sigma2), theory.exact_beta_variance(I, a.n0, a.d, a.sigma2), S1, S0
    )
    return {"remainder_variance": v}


THEORY_OPS = {
    "exact-beta-variance": _theory_exact_beta,
    "sigma-z": _theory_sigma_z,
    "gcomp-decomposition": _theory_gcomp_decomposition,
    "aipw-remainder": _theory_aipw_remainder,
    "sur-candes": _theory_sur_candes,
    "gcomp-variance": _theory_gcomp_variance,
    "efficiency-bound": _theory_efficiency_bound,
    "wishart-symmetry": _theory_wishart,
    "variance-floor": _theory_floor,
    "ols-arm-variance": _theory_ols_arm,
}


def cmd_theory(args) -> int:
    _emit(_json(THEORY_OPS[args.op](args)), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw one replicate dataset as CSV")
    p.add_argument("--config", required=True, help="JSON simulation config")
    p.add_argument("--rep", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="cross-fitted ATE estimate of a CSV dataset (JSON)")
    p.add_argument("--data", required=True, help="CSV with header w,y,x1,...,xd")
    p.add_argument("--nuisance", default="mle", choices=[external_name(m) for m in METHODS])
    p.add_argument("--estimator", default="aipw", choices=[external_name(e) for e in ESTIMATOR_NAMES])
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outcome-link", choices=["corrected", "raw"])
    p.add_argument("--platt-mode", choices=["loo", "holdout"])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("replicate", help="Monte Carlo replication of a simulation table (CSV)")
    p.add_argument("--table", type=int, required=True, choices=[1, 2, 3])
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--out", default=None)
    p.add_argument("--desk", action="store_true", help="quarter-size preset at the same aspect ratio")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("calibrate", help="reliability table of a corrected propensity fit (CSV)")
    p.add_argument("--config", required=True)
    p.add_argument("--method", required=True, choices=CORRECTIONS)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--n-eval", type=int, default=100_000)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--mode", choices=["raw", "corrected"], default="raw")
    p.add_argument("--platt-mode", choices=["loo", "holdout"], default="loo")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("theory", help="evaluate a theoretical quantity (JSON)")
    p.add_argument("--op", required=True, choices=sorted(THEORY_OPS))
    p.add_argument("--kappa", type=float, default=0.2)
    p.add_argument("--gamma2", type=float, default=5.0)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--beta-diff-norm2", type=float, default=1.0)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--p11", type=float, default=0.25)
    p.add_argument("--p10", type=float, default=0.25)
    p.add_argument("--mean-x-norm2", type=float, default=0.0)
    p.add_argument("--n", type=int, default=10, help="sample size (rows, or N for OLS-based ops)")
    p.add_argument("--n1", type=int, default=200, help="treated-arm training size")
    p.add_argument("--n0", type=int, default=200, help="control-arm training size")
    p.add_argument("--arm", type=int, choices=[0, 1], default=1)
    p.add_argument("--mean-x", type=float, default=0.0, help="common coordinate of E[X]")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--n-mc", type=int, default=200_000)
    p.add_argument("--n-grid", default="200,400,800")
    p.add_argument("--fixed-d", type=int, default=None)
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_theory)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
