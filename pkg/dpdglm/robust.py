"""
Influence-function diagnostics for the MDPDE and the Wald-type tests.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd

from dpdglm.asymp import CovariateDistribution, sandwich_analytic
from dpdglm.config import DEFAULT_LEVEL
from dpdglm.dpd import check_alpha, gamma_arrays, psi_parts
from dpdglm.errors import DomainError
from dpdglm.model import Eta, GlmModel
from dpdglm.numerics import chisq_critical, chisq_sf, poisson_weights, solve_spd
from dpdglm.wald import Hypothesis, _eta, _null_matrix, _require_null

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContaminationPoint:
    """Point mass (y_t, x_t) used to contaminate the model."""

    y_t: float
    x_t: np.ndarray

    def __post_init__(self):
        x_t = np.atleast_1d(np.asarray(self.x_t, dtype=float))
        if not (np.isfinite(self.y_t) and np.all(np.isfinite(x_t))):
            raise DomainError(f"contamination point must be finite (got {self.y_t}, {x_t})")
        object.__setattr__(self, "y_t", float(self.y_t))
        object.__setattr__(self, "x_t", x_t)

    def check(self, model: GlmModel) -> "ContaminationPoint":
        model.check_response(self.y_t)
        return self


def as_point(point) -> ContaminationPoint:
    if isinstance(point, ContaminationPoint):
        return point
    y_t, x_t = point
    return ContaminationPoint(y_t=y_t, x_t=x_t)


def _psi_grid(model: GlmModel, eta: Eta, alpha: float, y_values, X_points) -> np.ndarray:
    """
    Psi_alpha at every (y, x) pair, shape (len(y_values), len(X_points), k').
    gamma integrals depend on x only and are computed once per x.
    """
    y = np.asarray(y_values, dtype=float)[:, None]
    lp = X_points @ eta.beta
    gammas = gamma_arrays(model, lp, eta.phi, alpha)
    beta_part, phi_part = psi_parts(model, y, lp[None, :], eta.phi, alpha, gammas)
    psi = beta_part[:, :, None] * X_points[None, :, :]
    if phi_part is not None:
        psi = np.concatenate([psi, phi_part[:, :, None]], axis=2)
    return psi


def _influence(model, covariate_dist, eta: Eta, alpha, y_values, X_points) -> np.ndarray:
    J = sandwich_analytic(model, covariate_dist, eta, alpha).J
    psi = _psi_grid(model, eta, alpha, y_values, X_points)
    flat = psi.reshape(-1, psi.shape[-1])
    # Psi = gamma - K f^alpha is minus the usual score residual
    return -solve_spd(J, flat.T, name="J").T.reshape(psi.shape)


def if_estimator(
    model: GlmModel,
    covariate_dist: CovariateDistribution,
    eta,
    alpha: float,
    point,
) -> np.ndarray:
    """
    IF((y_t, x_t), T_alpha) = J_alpha(eta)^{-1} (K f^alpha - gamma)(y_t, x_t, eta),
    i.e. minus J^{-1} Psi_alpha. At alpha = 0 for Poisson this is
    (int e^{x^T beta} x x^T dG)^{-1} x_t (y_t - e^{x_t^T beta}).
    """
    alpha = check_alpha(alpha)
    eta = _eta(eta, model)
    point = as_point(point).check(model)
    if len(point.x_t) != eta.k:
        raise DomainError(f"x_t has {len(point.x_t)} entries, beta has {eta.k}")
    return _influence(model, covariate_dist, eta, alpha, [point.y_t], point.x_t[None, :])[0, 0]


def if1_test(model, covariate_dist, eta0, hypothesis, alpha, point) -> float:
    """First-order IF of the Wald-type statistic; zero at every null value."""
    _require_null(hypothesis, _eta(eta0, model))
    return 0.0


def _projection(model, covariate_dist, eta0: Eta, hypothesis, alpha) -> np.ndarray:
    """P = M [M^T Sigma M]^{-1} M^T at the null value."""
    sigma = sandwich_analytic(model, covariate_dist, eta0, alpha).Sigma
    M, middle = _null_matrix(hypothesis, eta0.to_vector(), sigma)
    return M @ solve_spd(middle, M.T, name="M^T Sigma M")


def if2_test(
    model: GlmModel,
    covariate_dist: CovariateDistribution,
    eta0,
    hypothesis: Hypothesis,
    alpha: float,
    point,
) -> float:
    """Second-order IF of W_n: IF^T M [M^T Sigma M]^{-1} M^T IF."""
    eta0 = _eta(eta0, model)
    _require_null(hypothesis, eta0)
    influence = if_estimator(model, covariate_dist, eta0, alpha, point)
    P = _projection(model, covariate_dist, eta0, hypothesis, alpha)
    return max(0.0, float(influence @ P @ influence))


def k_star(r: int, s: float, level: float = DEFAULT_LEVEL) -> float:
    """
    K*_r(s) = e^{-s/2} sum_v s^{v-1} (2v - s) / (v! 2^v) P(chi2_{r+2v} > chi2_{r,level}).

    With p_v the Poisson(s/2) weights this is sum_v p_v (T_{v+1} - T_v), so
    K*_r(0) = T_1 - T_0.
    """
    if s < 0:
        raise DomainError(f"s must be >= 0 (got {s})")
    c = chisq_critical(r, level)
    idx, weights = poisson_weights(s / 2.0)
    tails = chisq_sf(r + 2.0 * np.append(idx, idx[-1] + 1), c)
    return float(np.sum(weights * np.diff(tails)))


def pif_test(
    model: GlmModel,
    covariate_dist: CovariateDistribution,
    eta0,
    hypothesis: Hypothesis,
    d,
    alpha: float,
    point,
    level: float = DEFAULT_LEVEL,
) -> float:
    """
    Power influence function K*_r(d^T P d) d^T P IF, with
    P = M [M^T Sigma M]^{-1} M^T.
    """
    eta0 = _eta(eta0, model)
    _require_null(hypothesis, eta0)
    d = np.atleast_1d(np.asarray(d, dtype=float))
    P = _projection(model, covariate_dist, eta0, hypothesis, alpha)
    if d.shape != (P.shape[0],):
        raise DomainError(f"d must have {P.shape[0]} entries (got {d.shape})")
    if not np.any(d):
        return 0.0
    influence = if_estimator(model, covariate_dist, eta0, alpha, point)
    s = max(0.0, float(d @ P @ d))
    return k_star(hypothesis.r, s, level) * float(d @ P @ influence)


def lif_test(model, covariate_dist, eta0, hypothesis, alpha, point, level=DEFAULT_LEVEL) -> float:
    """Level influence function: the power IF at d = 0, which vanishes."""
    eta0 = _eta(eta0, model)
    zero = np.zeros(len(eta0.to_vector()))
    return pif_test(model, covariate_dist, eta0, hypothesis, zero, alpha, point, level)


class IfKind(str, Enum):
    ESTIMATOR = "estimator"
    SECOND_ORDER_TEST = "if2"
    POWER = "pif"


@dataclass(frozen=True)
class GridSpec:
    """
    Contamination grid: y_t over y_values and coordinate x_index of x_t over
    x_values, the other coordinates held at x_base. `component` picks the
    entry of the estimator IF that is reported.
    """

    y_values: np.ndarray
    x_values: np.ndarray
    x_base: Optional[np.ndarray] = None
    x_index: int = 0
    component: int = 0

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y_values, dtype=float))
        x = np.atleast_1d(np.asarray(self.x_values, dtype=float))
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))) or not len(y) or not len(x):
            raise DomainError("grid values must be finite and non-empty")
        object.__setattr__(self, "y_values", y)
        object.__setattr__(self, "x_values", x)
        if self.x_base is not None:
            object.__setattr__(self, "x_base", np.atleast_1d(np.asarray(self.x_base, dtype=float)))

    @classmethod
    def figure_default(cls, y_max: int = 30, x_min: float = -3.0, x_max: float = 3.0, x_step: float = 0.05) -> "GridSpec":
        """y_t in {0, ..., y_max} and x_t from x_min to x_max in steps of x_step."""
        count = int(round((x_max - x_min) / x_step)) + 1
        return cls(y_values=np.arange(0, y_max + 1), x_values=x_min + x_step * np.arange(count))

    def points(self, k: int) -> np.ndarray:
        base = np.ones(k) if self.x_base is None else self.x_base
        if len(base) != k or not 0 <= self.x_index < k:
            raise DomainError(f"grid base/x_index do not fit a design with {k} columns")
        X = np.tile(base, (len(self.x_values), 1))
        X[:, self.x_index] = self.x_values
        return X


@dataclass(frozen=True, eq=False)
class IfGrid:
    y_grid: np.ndarray
    x_grid: np.ndarray
    values: np.ndarray  # shape (len(y_grid), len(x_grid))
    sup_abs: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "sup_abs", float(np.max(np.abs(self.values))))

    def to_frame(self) -> pd.DataFrame:
        """Long format: one row per (y_t, x_t)."""
        yy, xx = np.meshgrid(self.y_grid, self.x_grid, indexing="ij")
        return pd.DataFrame({"y_t": yy.ravel(), "x_t": xx.ravel(), "value": self.values.ravel()})


def if_grid_scan(
    model: GlmModel,
    covariate_dist: CovariateDistribution,
    eta,
    alpha: float,
    which,
    grid_spec: GridSpec,
    hypothesis: Optional[Hypothesis] = None,
    d=None,
    level: float = DEFAULT_LEVEL,
) -> IfGrid:
    """
    Evaluate the estimator IF, the second-order test IF or the power IF over
    a (y_t, x_t) grid.
    """
    which = IfKind(which)
    alpha = check_alpha(alpha)
    eta = _eta(eta, model)
    for y in (grid_spec.y_values.min(), grid_spec.y_values.max()):
        model.check_response(y)
    X_points = grid_spec.points(eta.k)
    influence = _influence(model, covariate_dist, eta, alpha, grid_spec.y_values, X_points)

    if which is IfKind.ESTIMATOR:
        if not 0 <= grid_spec.component < influence.shape[-1]:
            raise DomainError(f"IF component {grid_spec.component} out of range")
        values = influence[:, :, grid_spec.component]
    else:
        if hypothesis is None:
            raise DomainError(f"{which.value} grid needs a hypothesis")
        _require_null(hypothesis, eta)
        P = _projection(model, covariate_dist, eta, hypothesis, alpha)
        if which is IfKind.SECOND_ORDER_TEST:
            values = np.clip(np.einsum("yxi,ij,yxj->yx", influence, P, influence), 0.0, None)
        else:
            if d is None:
                raise DomainError("power IF grid needs d")
            d = np.atleast_1d(np.asarray(d, dtype=float))
            s = max(0.0, float(d @ P @ d))
            values = k_star(hypothesis.r, s, level) * (influence @ (P @ d))
    logger.debug(f"{which.value} grid {values.shape}: sup |value| = {np.max(np.abs(values)):.4g}")
    return IfGrid(y_grid=grid_spec.y_values, x_grid=grid_spec.x_values, values=values)
