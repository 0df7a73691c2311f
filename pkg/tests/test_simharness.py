import numpy as np
import pandas as pd
import pytest
import toml

from dpdglm import simharness
from dpdglm.asymp import UnivariateNormal
from dpdglm.config import default_n_jobs
from dpdglm.errors import ConfigError, InputError, NonConvergence, PreconditionError, SimulationFailure
from dpdglm.estim import fit_path
from dpdglm.model import Eta, PoissonRegression
from dpdglm.robust import ContaminationPoint
from dpdglm.simharness import (
    SimConfig,
    generate_sample,
    replicate_rng,
    run_estimation_study,
    run_level_power_study,
)
from dpdglm.wald import LinearHypothesis, contiguous_power, power_fixed_alternative

CONFIG_TOML = """
family = "poisson"
beta = [1.0]
covariate_mean = 0.0
covariate_sd = 1.0
n = 100
replicates = 6
alphas = [0.5, 0.0]
L = [[1.0]]
l0 = [1.0]
seed = 7
"""


def make_config(**overrides):
    fields = dict(
        model=PoissonRegression(),
        covariate_dist=UnivariateNormal(),
        eta_true=Eta(beta=[1.0]),
        n=100,
        replicates=6,
        alpha_list=(0.0, 0.5),
        hypothesis=LinearHypothesis(L=[[1.0]], l0=[1.0]),
        seed=3,
    )
    fields.update(overrides)
    return SimConfig(**fields)


@pytest.fixture(autouse=True)
def serial_by_default(monkeypatch):
    monkeypatch.delenv("DPDGLM_N_JOBS", raising=False)


def test_replicate_streams():
    a = replicate_rng(5, 0).random(4)
    np.testing.assert_array_equal(a, replicate_rng(5, 0).random(4))
    assert not np.array_equal(a, replicate_rng(5, 1).random(4))
    assert not np.array_equal(a, replicate_rng(6, 0).random(4))


def test_generated_samples_are_reproducible():
    config = make_config()
    first = generate_sample(config, 2)
    again = generate_sample(config, 2)
    np.testing.assert_array_equal(first.X, again.X)
    np.testing.assert_array_equal(first.y, again.y)
    assert first.X.shape == (100, 1)


def test_fixed_contamination_share():
    point = ContaminationPoint(y_t=40.0, x_t=[2.5])
    config = make_config(n=2000, epsilon=0.3, contamination_point=point)
    sample = generate_sample(config, 0)
    hit = (sample.y == 40.0) & (sample.X[:, 0] == 2.5)
    assert abs(hit.mean() - 0.3) < 0.05


def test_contiguous_contamination_scales_with_root_n():
    point = ContaminationPoint(y_t=40.0, x_t=[2.5])
    config = make_config(n=2500, epsilon=0.5, contamination_point=point, contamination_mode="contiguous")
    sample = generate_sample(config, 0)
    hit = (sample.y == 40.0) & (sample.X[:, 0] == 2.5)
    assert abs(hit.mean() - 0.01) < 0.008


def test_config_validation():
    with pytest.raises(PreconditionError):
        make_config(epsilon=0.1)
    with pytest.raises(PreconditionError):
        make_config(replicates=0)
    with pytest.raises(PreconditionError):
        make_config(contamination_mode="sometimes")
    with pytest.raises(PreconditionError):
        make_config(seed=-1)
    assert make_config(alpha_list=(1.0, 0.0, 0.5)).alpha_list == (0.0, 0.5, 1.0)


def test_toml_round_trip(tmp_path):
    path = tmp_path / "study.toml"
    path.write_text(CONFIG_TOML)
    config = SimConfig.from_toml(path)
    assert config.alpha_list == (0.0, 0.5)
    assert config.n == 100 and config.seed == 7 and config.n_jobs == 1
    again = SimConfig.from_dict(toml.loads(config.to_toml()))
    assert again.to_dict() == config.to_dict()


def test_config_input_errors(tmp_path):
    with pytest.raises(InputError, match="unknown"):
        SimConfig.from_dict({"beta": [1.0], "n": 10, "replicates": 2, "colour": "red"})
    with pytest.raises(InputError, match="replicates"):
        SimConfig.from_dict({"beta": [1.0], "n": 10})
    with pytest.raises(InputError):
        SimConfig.from_dict({"beta": [1.0], "n": 10, "replicates": 2, "family": "gamma"})
    bad = tmp_path / "bad.toml"
    bad.write_text('n = 100\nfamily = "poisson\nbeta = [1.0]\n')
    with pytest.raises(InputError) as info:
        SimConfig.from_toml(bad)
    assert info.value.line == 2
    assert "Unbalanced quotes" in str(info.value)
    assert "column" in str(info.value)
    with pytest.raises(InputError):
        SimConfig.from_toml(tmp_path / "missing.toml")


def test_parallel_and_serial_runs_agree():
    serial = run_level_power_study(make_config(n_jobs=1)).to_frame()
    threaded = run_level_power_study(make_config(n_jobs=2)).to_frame()
    pd.testing.assert_frame_equal(serial, threaded)


def test_report_layout():
    frame = run_level_power_study(make_config()).to_frame()
    assert list(frame.columns) == [
        "alpha", "n_ok", "failures", "beta_mean_0", "beta_sd_0", "rejection_rate", "rejection_se",
    ]
    assert list(frame["alpha"]) == [0.0, 0.5]
    assert (frame["n_ok"] == 6).all()


def test_estimation_study_is_centred():
    report = run_estimation_study(make_config(n=200, replicates=20, hypothesis=None))
    for alpha in (0.0, 0.5):
        row = report.row(alpha)
        assert abs(row.eta_mean[0] - 1.0) < 0.05
        assert np.isnan(row.rejection_rate)


def test_level_study_needs_a_hypothesis():
    with pytest.raises(PreconditionError):
        run_level_power_study(make_config(hypothesis=None))


def test_clean_null_rejection_rate():
    report = run_level_power_study(make_config(n=100, replicates=200, seed=11))
    for alpha in (0.0, 0.5):
        assert abs(report.row(alpha).rejection_rate - 0.05) < 0.055


def test_outliers_break_the_classical_test_only():
    point = ContaminationPoint(y_t=25.0, x_t=[1.0])
    config = make_config(n=200, replicates=40, epsilon=0.05, contamination_point=point, seed=5)
    report = run_level_power_study(config)
    assert report.row(0.0).rejection_rate > 0.5
    assert report.row(0.5).rejection_rate < 0.25


def test_too_many_failures(monkeypatch):
    def failing_fit(*args, **kwargs):
        raise NonConvergence("forced")

    monkeypatch.setattr(simharness, "fit_path", failing_fit)
    with pytest.raises(SimulationFailure):
        run_estimation_study(make_config())


@pytest.mark.slow
@pytest.mark.parametrize("alpha", [0.0, 0.25, 0.5])
def test_null_law_at_full_scale(alpha):
    config = make_config(n=500, replicates=10_000, alpha_list=(alpha,), seed=2017, n_jobs=-1)
    assert 0.04 <= run_level_power_study(config).row(alpha).rejection_rate <= 0.06


def test_one_failed_replicate_is_tolerated(monkeypatch):
    real_fit_path = simharness.fit_path
    calls = []

    def flaky_fit_path(model, sample, alphas):
        calls.append(len(calls))
        if len(calls) == 3:
            raise NonConvergence("forced")
        return real_fit_path(model, sample, alphas)

    monkeypatch.setattr(simharness, "fit_path", flaky_fit_path)
    report = run_estimation_study(make_config(hypothesis=None))
    for alpha in (0.0, 0.5):
        assert report.row(alpha).failures == 1
        assert report.row(alpha).n_ok == 5


def test_two_failed_replicates_abort_a_small_study(monkeypatch):
    real_fit_path = simharness.fit_path
    calls = []

    def flaky_fit_path(model, sample, alphas):
        calls.append(len(calls))
        if len(calls) in (2, 4):
            raise NonConvergence("forced")
        return real_fit_path(model, sample, alphas)

    monkeypatch.setattr(simharness, "fit_path", flaky_fit_path)
    with pytest.raises(SimulationFailure, match="2 of 6"):
        run_estimation_study(make_config(hypothesis=None))


def test_contaminated_replicate_converges_from_a_restart():
    point = ContaminationPoint(y_t=25.0, x_t=[1.0])
    config = make_config(n=200, replicates=40, epsilon=0.05, contamination_point=point, seed=5)
    sample = generate_sample(config, 21)
    mle, robust = fit_path(config.model, sample, config.alpha_list)
    assert mle.converged and robust.converged
    assert robust.eta_hat.beta[0] == pytest.approx(1.0084, abs=0.01)
    assert abs(mle.eta_hat.beta[0] - 1.0) > abs(robust.eta_hat.beta[0] - 1.0)


def test_malformed_worker_count(monkeypatch):
    monkeypatch.setenv("DPDGLM_N_JOBS", "many")
    with pytest.raises(ConfigError, match="DPDGLM_N_JOBS"):
        default_n_jobs()
    with pytest.raises(InputError, match="DPDGLM_N_JOBS"):
        SimConfig.from_dict({"beta": [1.0], "n": 10, "replicates": 2})
    assert SimConfig.from_dict({"beta": [1.0], "n": 10, "replicates": 2, "n_jobs": 2}).n_jobs == 2
    monkeypatch.setenv("DPDGLM_N_JOBS", "0")
    with pytest.raises(ConfigError, match="-1"):
        default_n_jobs()
    monkeypatch.setenv("DPDGLM_N_JOBS", "3")
    assert default_n_jobs() == 3


@pytest.mark.slow
@pytest.mark.parametrize("alpha", [0.0, 0.5])
def test_contiguous_alternative_matches_asymptotic_power(alpha):
    config = make_config(
        n=400, replicates=4000, alpha_list=(alpha,), contiguous_d=[1.0], seed=2018, n_jobs=-1
    )
    expected = contiguous_power(
        config.model, config.covariate_dist, config.eta_true, config.hypothesis, d=[1.0], alpha=alpha
    )
    assert run_level_power_study(config).row(alpha).rejection_rate == pytest.approx(expected, abs=0.035)


@pytest.mark.slow
@pytest.mark.parametrize("alpha", [0.0, 0.25])
def test_fixed_alternative_matches_power_approximation(alpha):
    config = make_config(n=100, replicates=4000, alpha_list=(alpha,), eta_true=Eta(beta=[1.1]), seed=2019, n_jobs=-1)
    expected = power_fixed_alternative(
        config.model, config.covariate_dist, config.eta_true, config.hypothesis, n=100, alpha=alpha
    )
    assert run_level_power_study(config).row(alpha).rejection_rate == pytest.approx(expected, abs=0.035)
