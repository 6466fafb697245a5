import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit, logit

import hdate.harness as harness
from hdate.errors import ConfigError, FoldInfeasibleError, MleNonexistenceError
from hdate.estimators import crossfit, estimate
from hdate.nuisance import fit_logistic_mle
from hdate.harness import (
    CSV_HEADER,
    AllRepsFailedError,
    calibration_experiment,
    calibration_report,
    calibration_table,
    coefficient_experiment,
    coefficient_report,
    coefficient_slope,
    estimate_from_file,
    external_name,
    internal_name,
    plan_rows,
    recalibration_slope,
    run_monte_carlo,
    table_preset,
)
from hdate.simcore import SimulationConfig, simulate, true_params, write_dataset

TINY = SimulationConfig(n=240, d=8, n_reps=12)


@pytest.fixture(scope="module")
def tiny_report():
    return run_monte_carlo(TINY, ["mle", "platt", "propensity_oracle"], ["gcomp", "ipw", "aipw", "tmle_gaussian", "aipw_oracle"])


class TestReport:
    def test_moment_identities(self, tiny_report):
        for r in tiny_report.rows:
            vals = tiny_report.estimates[(r.nuisance_method, r.estimator)]
            ok = vals[np.isfinite(vals)]
            assert r.n_reps_used + r.n_reps_failed == TINY.n_reps
            assert abs(r.bias - (ok.mean() - tiny_report.truth)) <= 1e-12
            assert r.std_err == ok.std(ddof=1)
            assert r.mc_se_of_bias == r.std_err / math.sqrt(r.n_reps_used)

    def test_csv_layout(self, tiny_report):
        lines = tiny_report.to_csv().splitlines()
        assert lines[0] == ",".join(CSV_HEADER)
        assert len(lines) == 1 + len(tiny_report.rows)
        assert sum(l.startswith("oracle,aipw-oracle,") for l in lines) == 1
        assert any(l.startswith("propensity-oracle,tmle-gaussian,") for l in lines)

    def test_row_lookup(self, tiny_report):
        assert tiny_report.row("propensity-oracle", "aipw").estimator == "aipw"
        with pytest.raises(KeyError):
            tiny_report.row("sloe", "aipw")

    def test_kappa(self, tiny_report):
        assert tiny_report.nominal_kappa == pytest.approx(8 / 240)
        assert tiny_report.effective_kappa == pytest.approx(8 / 192)

    def test_t_n_recorded(self, tiny_report):
        tn = tiny_report.t_n["mle"]
        assert tn.shape == (TINY.n_reps, 2) and np.all(np.isfinite(tn))

    @pytest.mark.parametrize("parallelism", [4, 16])
    def test_parallel_byte_identical(self, tiny_report, parallelism):
        r = run_monte_carlo(
            TINY, ["mle", "platt", "propensity_oracle"], ["gcomp", "ipw", "aipw", "tmle_gaussian", "aipw_oracle"], parallelism
        )
        assert r.to_csv() == tiny_report.to_csv()

    def test_null_effect(self):
        cfg = SimulationConfig(n=400, d=8, gamma2=0.0, tau=0.0, n_reps=200)
        r = run_monte_carlo(cfg, [], ["aipw_oracle"]).row("oracle", "aipw_oracle")
        assert abs(r.bias) <= 3 * r.mc_se_of_bias


class TestFailures:
    def test_always_failing_method(self, monkeypatch):
        real = harness.crossfit_many

        def broken(data, methods, *a, **k):
            if "platt" in methods:
                raise MleNonexistenceError("injected")
            return real(data, methods, *a, **k)

        monkeypatch.setattr(harness, "crossfit_many", broken)
        cfg = SimulationConfig(n=200, d=8, n_reps=5)
        with pytest.raises(AllRepsFailedError) as exc:
            run_monte_carlo(cfg, ["mle", "platt"], ["aipw"])
        assert ("platt", "aipw") in exc.value.rows
        rep = run_monte_carlo(cfg, ["mle", "platt"], ["aipw"], allow_failed_rows=True)
        bad = rep.row("platt", "aipw")
        assert bad.n_reps_failed == 5 and bad.n_reps_used == 0
        assert bad.failures == {"MleNonexistenceError": 5}
        assert rep.row("mle", "aipw").n_reps_used == 5

    def test_infeasible_config_counts(self):
        cfg = SimulationConfig(n=120, d=56, n_reps=3)
        rep = run_monte_carlo(cfg, ["mle"], ["gcomp"], allow_failed_rows=True)
        assert rep.rows[0].n_reps_failed == 3

    def test_bad_parallelism(self):
        with pytest.raises(ConfigError):
            run_monte_carlo(TINY, ["mle"], ["gcomp"], parallelism=0)


class TestPlan:
    def test_rows(self):
        pairs = plan_rows(["mle", "sloe"], ["gcomp", "gcomp_raw_link", "ipw_corrected", "tmle_binomial", "aipw_oracle"], True)
        assert ("mle", "ipw_corrected") not in pairs and ("mle", "gcomp_raw_link") not in pairs
        assert ("sloe", "ipw_corrected") in pairs and ("sloe", "gcomp_raw_link") in pairs
        assert pairs.count(("oracle", "aipw_oracle")) == 1
        linear = plan_rows(["mle"], ["tmle_binomial", "gcomp"], False)
        assert linear == [("mle", "gcomp")]

    def test_unknown(self):
        with pytest.raises(ConfigError):
            plan_rows(["mle"], ["bogus"], False)

    def test_presets(self):
        assert (table_preset(1).config.n, table_preset(1).config.d) == (4000, 8)
        assert (table_preset(2).config.n, table_preset(2).config.d) == (4000, 320)
        t3 = table_preset(3)
        assert (t3.config.n, t3.config.d, t3.config.family) == (8000, 640, "logistic")
        # d = 8 is the smallest admissible dimension, so the desk Table 1 keeps it.
        assert table_preset(1, desk=True).config.d == 8
        for t in (2, 3):
            assert table_preset(t, desk=True).config.kappa == table_preset(t).config.kappa
        with pytest.raises(ConfigError):
            table_preset(4)

    def test_names(self):
        assert external_name("full_oracle") == "oracle"
        assert internal_name("propensity-oracle") == "propensity_oracle"
        for n in ("ipw_corrected", "full_oracle", "tmle_binomial"):
            assert internal_name(external_name(n)) == n


class TestCalibration:
    def test_hand_two_bins(self):
        p = np.array([0.9, 0.1, 0.8, 0.2, 0.7, 0.3, 0.6, 0.4, 0.5, 0.05])
        y = np.array([1, 0, 1, 0, 0, 1, 1, 0, 1, 0])
        t = calibration_table(p, y, 2)
        low, high = t.bins
        assert low.count == high.count == 5
        assert low.mean_predicted == pytest.approx((0.05 + 0.1 + 0.2 + 0.3 + 0.4) / 5)
        assert low.mean_observed == pytest.approx(1 / 5)
        assert high.mean_predicted == pytest.approx((0.5 + 0.6 + 0.7 + 0.8 + 0.9) / 5)
        assert high.mean_observed == pytest.approx(4 / 5)

    @given(st.integers(2, 30), st.integers(30, 200), st.integers(0, 10_000))
    def test_table_invariants(self, bins, n, seed):
        rng = np.random.default_rng(seed)
        p = rng.random(n)
        t = calibration_table(p, rng.random(n) < p, bins)
        assert t.n == n
        means = [b.mean_predicted for b in t.bins]
        assert means == sorted(means)

    def test_perfect_calibration(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0.01, 0.99, 200_000)
        y = (rng.random(p.size) < p).astype(float)
        for b in calibration_table(p, y, 10).bins:
            assert abs(b.mean_predicted - b.mean_observed) <= 3 * math.sqrt(b.mean_predicted * (1 - b.mean_predicted) / b.count)

    def test_over_confidence_signature(self):
        cfg = SimulationConfig(n=1000, d=200, family="logistic", n_reps=1)
        exp = calibration_experiment(cfg, "mle", n_bins=10, n_eval=100_000)
        for b in exp.table.bins:
            if b.mean_predicted < 0.4:
                assert b.mean_observed > b.mean_predicted
            elif b.mean_predicted > 0.6:
                assert b.mean_observed < b.mean_predicted
        assert exp.mean_slope < 1

    def test_empty_bin_error(self):
        with pytest.raises(ConfigError):
            calibration_table(np.array([0.1, 0.2]), np.array([0, 1]), 3)
        with pytest.raises(ConfigError):
            calibration_table(np.array([0.1, 0.2]), np.array([0, 1]), 1)

    def test_recalibration_slope(self):
        rng = np.random.default_rng(1)
        z = rng.normal(0, 2, 50_000)
        y = (rng.random(z.size) < expit(0.5 * z)).astype(float)
        assert recalibration_slope(z, y) == pytest.approx(0.5, abs=0.03)

    def test_report_checks(self):
        ds = simulate(SimulationConfig(n=400, d=8, family="logistic"), 0)
        fit = fit_logistic_mle(ds.X, ds.W.astype(float))
        t = calibration_report(fit, ds.X, ds.W, 4)
        assert t.n == 400 and np.isfinite(t.recalibration_slope)
        with pytest.raises(ConfigError):
            calibration_report(fit, ds.X[:, :3], ds.W, 4)


class TestCoefficients:
    def test_identity(self):
        t = np.array([1.0, -2.0, 0.5])
        assert coefficient_slope(t, t) == (1.0, False)

    def test_degenerate(self):
        slope, flag = coefficient_slope(np.zeros(3), np.ones(3))
        assert flag and math.isnan(slope)

    def test_mismatch(self):
        with pytest.raises(ConfigError):
            coefficient_slope(np.ones(2), np.ones(3))

    def test_report_csv(self, tmp_path):
        ds = simulate(SimulationConfig(n=400, d=8), 0)
        fit = fit_logistic_mle(ds.X, ds.W.astype(float))
        p = true_params(SimulationConfig(n=400, d=8))
        rep = coefficient_report(fit, p, tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "index,true_coef,estimated_coef" and len(lines) == 9
        assert rep.slope == pytest.approx(1.0, abs=0.3)

    @pytest.mark.slow
    def test_slopes_by_method(self):
        cfg = SimulationConfig(n=1000, d=200, family="logistic")
        mle = coefficient_experiment(cfg, "mle", 20).mean()
        platt = coefficient_experiment(cfg, "platt", 20).mean()
        sloe = coefficient_experiment(cfg, "sloe", 20).mean()
        assert mle > 1 and platt < 1
        assert sloe == pytest.approx(1.0, abs=0.05)


class TestEstimateFromFile:
    def test_round_trip(self, tmp_path):
        ds = simulate(SimulationConfig(n=300, d=8), 0)
        path = tmp_path / "d.csv"
        write_dataset(ds, path)
        for method, est in (("mle", "aipw"), ("platt", "tmle-gaussian"), ("sloe", "gcomp")):
            a = estimate_from_file(path, method, est, 5, 3)
            b = estimate(internal_name(est), ds, crossfit(ds, 5, method, 3))
            assert a.estimate == b.estimate

    def test_oracle_rejected(self, tmp_path):
        ds = simulate(SimulationConfig(n=300, d=8), 0)
        for m, e in (("oracle", "aipw"), ("propensity-oracle", "aipw"), ("mle", "aipw-oracle")):
            with pytest.raises(ConfigError, match="oracle"):
                estimate_from_file(ds, m, e)

    def test_infeasible(self):
        ds = simulate(SimulationConfig(n=200, d=96), 0)
        with pytest.raises(FoldInfeasibleError, match="fold .*arm"):
            estimate_from_file(ds, "mle", "aipw")
