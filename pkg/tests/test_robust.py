import numpy as np
import pytest
from scipy import stats

from dpdglm.asymp import UnivariateNormal, sandwich_analytic
from dpdglm.errors import DomainError, PreconditionError
from dpdglm.model import Eta, NormalLinearRegression
from dpdglm.numerics import chisq_critical, chisq_sf
from dpdglm.robust import (
    ContaminationPoint,
    GridSpec,
    IfKind,
    if1_test,
    if2_test,
    if_estimator,
    if_grid_scan,
    k_star,
    lif_test,
    pif_test,
)
from dpdglm.wald import LinearHypothesis, contaminated_contiguous_power, contaminated_level
from tests.conftest import brute_force_count_gammas

NULL = LinearHypothesis(L=[[1.0]], l0=[1.0])
ETA0 = Eta(beta=[1.0])


@pytest.mark.parametrize("y_t,x_t", [(5.0, 0.5), (0.0, -1.0), (12.0, 2.0)])
def test_mle_influence_is_linear_in_y(poisson, std_normal_covariate, y_t, x_t):
    value = if_estimator(poisson, std_normal_covariate, ETA0, 0.0, (y_t, [x_t]))
    expected = x_t * (y_t - np.exp(x_t)) / (2 * np.exp(0.5))
    assert value[0] == pytest.approx(expected, rel=1e-8)


def test_influence_vanishes_at_zero_residual(poisson, std_normal_covariate):
    value = if_estimator(poisson, std_normal_covariate, ETA0, 0.0, ContaminationPoint(2.0, [np.log(2.0)]))
    assert value[0] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("alpha", [0.1, 0.5, 1.0])
def test_poisson_influence_closed_form(poisson, std_normal_covariate, alpha):
    y_t, x_t = 4.0, 0.8
    J = sandwich_analytic(poisson, std_normal_covariate, ETA0, alpha).J[0, 0]
    mu = np.exp(x_t)
    f = stats.poisson.pmf(y_t, mu)
    _, gamma1, _ = brute_force_count_gammas(x_t, 1.0 + alpha)
    expected = x_t * ((y_t - mu) * f**alpha - gamma1) / J
    value = if_estimator(poisson, std_normal_covariate, ETA0, alpha, (y_t, [x_t]))
    assert value[0] == pytest.approx(expected, rel=1e-8)


def test_normal_influence_is_bounded_only_for_positive_alpha():
    model = NormalLinearRegression()
    dist = UnivariateNormal(intercept=True)
    eta = Eta(beta=[0.0, 1.0], phi=1.0)
    far = (1000.0, [1.0, 0.0])
    assert np.max(np.abs(if_estimator(model, dist, eta, 0.0, far))) > 500
    assert np.max(np.abs(if_estimator(model, dist, eta, 0.5, far))) < 1.0


def test_influence_point_checks(poisson, std_normal_covariate):
    with pytest.raises(DomainError):
        if_estimator(poisson, std_normal_covariate, ETA0, 0.5, (1.5, [0.0]))
    with pytest.raises(DomainError):
        if_estimator(poisson, std_normal_covariate, ETA0, 0.5, (1.0, [0.0, 1.0]))


def test_first_order_and_level_influence_vanish(poisson, std_normal_covariate):
    point = (7.0, [1.2])
    assert if1_test(poisson, std_normal_covariate, ETA0, NULL, 0.5, point) == 0.0
    assert lif_test(poisson, std_normal_covariate, ETA0, NULL, 0.5, point) == 0.0
    with pytest.raises(PreconditionError):
        if1_test(poisson, std_normal_covariate, [1.3], NULL, 0.5, point)


@pytest.mark.parametrize("alpha", [0.0, 0.25, 1.0])
def test_second_order_influence_is_projected_square(poisson, std_normal_covariate, alpha):
    point = (3.0, [-0.7])
    influence = if_estimator(poisson, std_normal_covariate, ETA0, alpha, point)[0]
    sigma = sandwich_analytic(poisson, std_normal_covariate, ETA0, alpha).Sigma[0, 0]
    value = if2_test(poisson, std_normal_covariate, ETA0, NULL, alpha, point)
    assert value == pytest.approx(influence**2 / sigma, rel=1e-10)


def test_k_star_at_zero():
    c = chisq_critical(1, 0.05)
    assert k_star(1, 0.0) == pytest.approx(chisq_sf(3, c) - 0.05, rel=1e-12)


@pytest.mark.parametrize("r,s", [(1, 0.5), (1, 3.3), (2, 8.0), (3, 20.0)])
def test_k_star_is_twice_the_power_slope(r, s):
    c = chisq_critical(r, 0.05)
    h = 1e-4
    slope = (stats.ncx2.sf(c, r, s + h) - stats.ncx2.sf(c, r, s - h)) / (2 * h)
    assert k_star(r, s) == pytest.approx(2 * slope, rel=1e-5)


@pytest.mark.parametrize(
    "alpha,point,d",
    [
        (0.0, (4.0, [1.0]), 1.0),
        (0.1, (2.0, [0.3]), 1.5),
        (0.25, (3.0, [0.5]), 1.0),
        (0.5, (0.0, [-1.0]), 2.0),
        (1.0, (6.0, [1.5]), 1.0),
    ],
)
def test_power_influence_matches_epsilon_derivative(poisson, std_normal_covariate, alpha, point, d):
    h = 1e-6
    args = (poisson, std_normal_covariate, ETA0, NULL, [d])
    base = contaminated_contiguous_power(*args, 0.0, point, 0.05, alpha)
    bumped = contaminated_contiguous_power(*args, h, point, 0.05, alpha)
    pif = pif_test(poisson, std_normal_covariate, ETA0, NULL, [d], alpha, point)
    assert pif == pytest.approx((bumped - base) / h, rel=1e-4, abs=1e-7)


@pytest.mark.parametrize("seed", range(5))
def test_level_influence_is_numerically_zero(poisson, std_normal_covariate, seed):
    rng = np.random.default_rng(seed)
    point = (float(rng.integers(0, 15)), [rng.uniform(-2, 2)])
    h = 1e-8
    base = contaminated_level(poisson, std_normal_covariate, ETA0, NULL, 0.0, point, 0.05, 0.5)
    level = contaminated_level(poisson, std_normal_covariate, ETA0, NULL, h, point, 0.05, 0.5)
    assert abs((level - base) / h) < 1e-6


def test_power_influence_without_shift(poisson, std_normal_covariate):
    assert pif_test(poisson, std_normal_covariate, ETA0, NULL, [0.0], 0.5, (9.0, [1.0])) == 0.0


def figure_grid(poisson, alpha, y_max=30):
    return if_grid_scan(
        poisson, UnivariateNormal(), ETA0, alpha, "estimator", GridSpec.figure_default(y_max=y_max)
    )


def test_estimator_grid_shape(poisson):
    grid = figure_grid(poisson, 0.25)
    assert grid.values.shape == (31, 121)
    assert grid.x_grid[0] == pytest.approx(-3.0) and grid.x_grid[-1] == pytest.approx(3.0)
    frame = grid.to_frame()
    assert list(frame.columns) == ["y_t", "x_t", "value"]
    assert len(frame) == 31 * 121
    assert frame["value"].abs().max() == pytest.approx(grid.sup_abs)


def test_supremum_decreases_with_alpha(poisson):
    sups = [figure_grid(poisson, a).sup_abs for a in (0.1, 0.25, 0.5, 1.0)]
    assert all(b < a for a, b in zip(sups, sups[1:]))


def test_supremum_under_wider_response_range(poisson):
    assert figure_grid(poisson, 0.0, 100).sup_abs / figure_grid(poisson, 0.0, 50).sup_abs > 1.9
    for alpha in (0.1, 0.25, 0.5, 1.0):
        wide = figure_grid(poisson, alpha, 100).sup_abs
        assert wide == pytest.approx(figure_grid(poisson, alpha, 50).sup_abs, rel=1e-12)


def test_test_grids_match_pointwise(poisson, std_normal_covariate):
    spec = GridSpec(y_values=[0, 3, 8], x_values=[-1.0, 0.4, 2.0])
    if2 = if_grid_scan(poisson, std_normal_covariate, ETA0, 0.5, IfKind.SECOND_ORDER_TEST, spec, NULL)
    pif = if_grid_scan(poisson, std_normal_covariate, ETA0, 0.5, "pif", spec, NULL, d=[1.0])
    assert np.all(if2.values >= 0)
    for i, y in enumerate([0.0, 3.0, 8.0]):
        for j, x in enumerate([-1.0, 0.4, 2.0]):
            point = (y, [x])
            expected = if2_test(poisson, std_normal_covariate, ETA0, NULL, 0.5, point)
            assert if2.values[i, j] == pytest.approx(expected, rel=1e-10, abs=1e-14)
            expected = pif_test(poisson, std_normal_covariate, ETA0, NULL, [1.0], 0.5, point)
            assert pif.values[i, j] == pytest.approx(expected, rel=1e-10, abs=1e-14)


def test_grid_argument_checks(poisson, std_normal_covariate):
    spec = GridSpec(y_values=[0, 1], x_values=[0.5])
    with pytest.raises(DomainError):
        if_grid_scan(poisson, std_normal_covariate, ETA0, 0.5, "if2", spec)
    with pytest.raises(DomainError):
        if_grid_scan(poisson, std_normal_covariate, ETA0, 0.5, "pif", spec, NULL)
    wrong_component = GridSpec(y_values=[0, 1], x_values=[0.5], component=1)
    with pytest.raises(DomainError):
        if_grid_scan(poisson, std_normal_covariate, ETA0, 0.5, "estimator", wrong_component)
    with pytest.raises(ValueError):
        if_grid_scan(poisson, std_normal_covariate, ETA0, 0.5, "level", spec, NULL)


@pytest.mark.parametrize("x_t", [-2.0, 0.5, 2.0])
def test_poisson_influence_stays_bounded_for_huge_counts(poisson, std_normal_covariate, x_t):
    values = [
        if_estimator(poisson, std_normal_covariate, ETA0, 0.5, (y_t, [x_t]))[0] for y_t in (10.0, 100.0, 1e3, 1e4)
    ]
    assert np.all(np.isfinite(values))
    assert max(abs(v) for v in values) < 5.0
    assert values[-1] == pytest.approx(values[-2], abs=1e-8)
    mle = if_estimator(poisson, std_normal_covariate, ETA0, 0.0, (1e4, [x_t]))[0]
    assert abs(mle) > 1000
