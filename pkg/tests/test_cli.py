import json
import subprocess
import sys

import pytest

from hdate.cli import THEORY_OPS, main
from hdate.simcore import SimulationConfig, load_dataset, simulate


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"n": 300, "d": 8, "n_reps": 2}))
    return path


@pytest.fixture
def data_file(tmp_path, config_file):
    out = tmp_path / "d.csv"
    assert main(["simulate", "--config", str(config_file), "--rep", "1", "--out", str(out)]) == 0
    return out


def test_simulate(data_file):
    ds = load_dataset(data_file)
    ref = simulate(SimulationConfig(n=300, d=8, n_reps=2), 1)
    assert ds.X.tobytes() == ref.X.tobytes() and ds.Y.tobytes() == ref.Y.tobytes()


def test_estimate_json(data_file, capsys):
    assert main(["estimate", "--data", str(data_file), "--nuisance", "sloe", "--estimator", "tmle-gaussian"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["estimator"] == "tmle_gaussian" or out["estimator"] == "tmle-gaussian"
    assert isinstance(out["estimate"], float)


@pytest.mark.parametrize("nuisance,estimator", [("oracle", "aipw"), ("mle", "aipw-oracle")])
def test_estimate_oracle_exit_2(data_file, nuisance, estimator, capsys):
    assert main(["estimate", "--data", str(data_file), "--nuisance", nuisance, "--estimator", estimator]) == 2
    assert "oracle" in capsys.readouterr().err


def test_estimate_too_many_folds(data_file):
    assert main(["estimate", "--data", str(data_file), "--folds", "200"]) == 2


def test_missing_file(tmp_path):
    assert main(["estimate", "--data", str(tmp_path / "none.csv")]) == 2


def test_numerical_exit_3(tmp_path):
    # Treatment perfectly determined by the first covariate: the MLE does not exist.
    lines = ["w,y,x1,x2"]
    for i in range(60):
        x1 = (i - 29.5) / 10
        lines.append(f"{int(x1 > 0)},{i % 3},{x1},{(i * 7) % 5 - 2}")
    path = tmp_path / "sep.csv"
    path.write_text("\n".join(lines) + "\n")
    assert main(["estimate", "--data", str(path), "--nuisance", "mle", "--estimator", "ipw"]) == 3


def test_replicate_desk(tmp_path, capsys):
    out = tmp_path / "t.csv"
    assert main(["replicate", "--table", "1", "--reps", "3", "--desk", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "nuisance,estimator,bias,std_err,reps_used,reps_failed,mc_se"
    summary = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert summary["n"] == 1000 and summary["effective_kappa"] > summary["nominal_kappa"]


def test_calibrate(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 400, "d": 40, "family": "logistic"}))
    out = tmp_path / "cal.csv"
    assert main(["calibrate", "--config", str(cfg), "--method", "platt", "--bins", "5", "--n-eval", "20000", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 6


def test_bad_config_exit_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 100, "d": 7}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2


def test_theory_sur_candes(capsys):
    assert main(["theory", "--op", "sur-candes", "--kappa", "0.2", "--gamma2", "5"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["alpha"] == pytest.approx(1.499, abs=2e-3)


def test_theory_exact_beta(capsys):
    assert main(["theory", "--op", "exact-beta-variance", "--n", "100", "--d", "10"]) == 0
    assert json.loads(capsys.readouterr().out)["coordinate_variance"] == pytest.approx(1 / 89)


def test_theory_bad_range():
    assert main(["theory", "--op", "gcomp-variance", "--kappa", "1.5"]) == 2


@pytest.mark.parametrize("op", sorted(THEORY_OPS))
def test_every_theory_op_runs(op, capsys):
    args = ["theory", "--op", op, "--n-mc", "10000", "--reps", "20", "--n", "10", "--d", "2"]
    if op == "variance-floor":
        args += ["--n-grid", "40,80"]
    assert main(args) == 0
    json.loads(capsys.readouterr().out)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "hdate", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "replicate" in res.stdout
