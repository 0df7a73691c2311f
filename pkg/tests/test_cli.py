import subprocess
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from dpdglm.cli import main
from tests.conftest import irls_poisson

REPO_ROOT = Path(__file__).resolve().parents[1]


def key_values(text):
    return dict(line.split("=", 1) for line in text.strip().splitlines())


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def toy_oracle():
    X = np.column_stack([np.ones(5), [-1.0, -0.5, 0.0, 0.5, 1.0]])
    return irls_poisson(X, [0, 1, 1, 3, 4])


def test_fit_matches_irls(capsys, poisson_csv):
    code, out, _ = run(capsys, "fit", poisson_csv, "--format", "kv")
    assert code == 0
    values = key_values(out)
    assert values["converged"] == "true"
    estimate = [float(values["estimate.one"]), float(values["estimate.x"])]
    np.testing.assert_allclose(estimate, toy_oracle(), rtol=1e-6)
    assert float(values["std_error.x"]) > 0


def test_fit_text_report(capsys, poisson_csv):
    code, out, _ = run(capsys, "fit", poisson_csv, "--alpha", "0.25")
    assert code == 0
    assert "alpha=0.25" in out
    assert "std.error" in out


def test_malformed_row_exits_with_line_number(capsys, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("y,x\n1,0.5\n2,oops\n")
    code, _, err = run(capsys, "fit", path)
    assert code == 1
    assert "line 3" in err


def test_negative_alpha_is_a_usage_error(capsys, poisson_csv):
    code, _, err = run(capsys, "fit", poisson_csv, "--alpha", "-0.5")
    assert code == 1
    assert "alpha" in err


def test_missing_subcommand_is_a_usage_error(capsys):
    assert run(capsys)[0] == 1


def test_non_convergence_exits_2(capsys, poisson_csv):
    code, _, err = run(capsys, "fit", poisson_csv, "--max-iter", "1")
    assert code == 2
    assert "converge" in err


def test_separation_exits_2(capsys, tmp_path):
    path = tmp_path / "separated.csv"
    path.write_text("y,a,b\n1,1,0\n2,1,0\n3,1,0\n0,0,1\n0,0,1\n")
    assert run(capsys, "fit", path)[0] == 2


def test_wald_test_at_the_estimate(capsys, poisson_csv):
    _, out, _ = run(capsys, "fit", poisson_csv, "--format", "kv")
    slope = key_values(out)["estimate.x"]
    code, out, _ = run(capsys, "test", poisson_csv, "--L", "0,1", "--l0", slope, "--format", "kv")
    assert code == 0
    values = key_values(out)
    assert float(values["statistic"]) == 0.0
    assert values["reject"] == "false"
    assert values["df"] == "1"


def test_wald_test_is_invariant_to_rescaling(capsys, poisson_csv):
    _, out, _ = run(capsys, "test", poisson_csv, "--L", "0,1", "--l0", "0", "--format", "kv", "--alpha", "0.3")
    base = key_values(out)
    _, out, _ = run(capsys, "test", poisson_csv, "--L", "0,4", "--l0", "0", "--format", "kv", "--alpha", "0.3")
    scaled = key_values(out)
    assert float(scaled["statistic"]) == pytest.approx(float(base["statistic"]), rel=1e-10)
    assert 0.0 <= float(base["p_value"]) <= 1.0


def test_wald_test_text_and_errors(capsys, poisson_csv):
    code, out, _ = run(capsys, "test", poisson_csv, "--L", "0,1", "--l0", "5", "--level", "0.1")
    assert code == 0
    assert "H0 at level 0.1" in out
    assert run(capsys, "test", poisson_csv)[0] == 1
    assert run(capsys, "test", poisson_csv, "--phi0", "1.0")[0] == 1
    assert run(capsys, "test", poisson_csv, "--L", "1,0;2,0", "--l0", "1,2")[0] == 1


def test_table_command(capsys, tmp_path):
    path = tmp_path / "out" / "are.csv"
    code, _, _ = run(capsys, "table", "ARE", "--alphas", "0,0.25", "--output", path)
    assert code == 0
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["mu_x", "beta0", "0", "0.25"]
    assert (frame["0"] == 1.0).all()
    cell = frame.loc[(frame["mu_x"] == 0) & (frame["beta0"] == 1), "0.25"].item()
    assert cell == pytest.approx(0.927, abs=0.002)


def test_power_table_to_stdout(capsys):
    code, out, _ = run(capsys, "table", "ContiguousPower", "--alphas", "0")
    assert code == 0
    assert out.splitlines()[0] == "d,mu_x,beta0,0"
    assert len(out.strip().splitlines()) == 11


def test_power_command(capsys):
    code, out, _ = run(capsys, "power", "--beta-star", "1.2", "--l0", "1", "--n", "50", "--alpha", "0.25")
    assert code == 0
    assert 0.0 < float(key_values(out)["power"]) < 1.0
    code, out, _ = run(capsys, "power", "--beta-star", "1.2", "--l0", "1", "--target-power", "0.8")
    assert code == 0
    assert int(key_values(out)["sample_size"]) > 2
    assert run(capsys, "power", "--beta-star", "1.2", "--l0", "1")[0] == 1


def test_ifgrid_supremum_falls_with_alpha(capsys, tmp_path):
    sups = {}
    for alpha in ("0.1", "0.5"):
        path = tmp_path / f"if_{alpha}.csv"
        code, out, _ = run(capsys, "ifgrid", "estimator", "--alpha", alpha, "--output", path)
        assert code == 0
        sups[alpha] = float(key_values(out)["sup_abs"])
        frame = pd.read_csv(path)
        assert len(frame) == 31 * 121
        assert frame["value"].abs().max() == pytest.approx(sups[alpha])
    assert sups["0.5"] < sups["0.1"]


def test_ifgrid_test_kinds(capsys, tmp_path):
    for which in ("if2", "pif"):
        path = tmp_path / f"{which}.csv"
        code, _, _ = run(capsys, "ifgrid", which, "--alpha", "0.25", "--y-max", "5", "--x-step", "0.5", "--output", path)
        assert code == 0
        assert len(pd.read_csv(path)) == 6 * 13


def write_config(tmp_path, replicates):
    path = tmp_path / "study.toml"
    path.write_text(
        'family = "poisson"\nbeta = [1.0]\nn = 100\n'
        f"replicates = {replicates}\nalphas = [0.0, 0.5]\nL = [[1.0]]\nl0 = [1.0]\nseed = 99\n"
    )
    return path


def test_simulate_is_deterministic(capsys, tmp_path):
    config = write_config(tmp_path, 1)
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(capsys, "simulate", config, "--output", first)[0] == 0
    assert run(capsys, "simulate", config, "--output", second, "--n-jobs", "2")[0] == 0
    assert first.read_bytes() == second.read_bytes()
    assert list(pd.read_csv(first)["alpha"]) == [0.0, 0.5]


def test_simulate_config_errors(capsys, tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text('n = 100\nfamily = "poisson\nbeta = [1.0]\n')
    code, _, err = run(capsys, "simulate", path)
    assert code == 1
    assert "line 2" in err
    assert "Unbalanced quotes" in err
    assert run(capsys, "simulate", tmp_path / "nothing.toml")[0] == 1


def test_simulate_rejects_malformed_worker_count(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("DPDGLM_N_JOBS", "many")
    code, _, err = run(capsys, "simulate", write_config(tmp_path, 1))
    assert code == 1
    assert "DPDGLM_N_JOBS" in err


def test_module_entry_point(poisson_csv, tmp_path):
    ok = subprocess.run(
        [sys.executable, "-m", "dpdglm", "fit", str(poisson_csv), "--format", "kv", "--quiet"],
        cwd=REPO_ROOT,
        capture_output=True,
        text=True,
    )
    assert ok.returncode == 0
    assert "converged=true" in ok.stdout
    bad = tmp_path / "bad.csv"
    bad.write_text("y,x\n1\n")
    failed = subprocess.run(
        [sys.executable, "-m", "dpdglm", "fit", str(bad)], cwd=REPO_ROOT, capture_output=True, text=True
    )
    assert failed.returncode == 1
    assert "line 2" in failed.stderr
