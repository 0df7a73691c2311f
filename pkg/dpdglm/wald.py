"""
Wald-type tests built on the MDPDE: statistic and null law, power at fixed and
contiguous alternatives, sample size, and the noncentral chi-square series.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Protocol, Sequence, Tuple, runtime_checkable

import numpy as np

from dpdglm.asymp import CovariateDistribution, sandwich_analytic
from dpdglm.config import DEFAULT_LEVEL, REPORT_LEVELS, SERIES_MAX_TERMS, SERIES_TOL
from dpdglm.errors import DomainError, PreconditionError, Singular
from dpdglm.estim import MdpdeFit
from dpdglm.model import Eta, GlmModel
from dpdglm.numerics import (
    central_gradient,
    chisq_critical,
    chisq_sf,
    normal_cdf,
    normal_quantile,
    poisson_weights as _poisson_weights,
    quadratic_form_inverse,
    solve_spd,
)

logger = logging.getLogger(__name__)

DERIVATIVE_MODES = ("diagonal", "first_slot")


@runtime_checkable
class Hypothesis(Protocol):
    """H0: m(eta) = 0 with r restrictions and Jacobian M(eta) of shape (len(eta), r)."""

    @property
    def r(self) -> int: ...

    def m(self, eta_vec: np.ndarray) -> np.ndarray: ...

    def jacobian(self, eta_vec: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class LinearHypothesis:
    """
    H0: L beta = l0 (L has k columns) or L eta = l0 (L has k + 1 columns).
    """

    L: np.ndarray
    l0: np.ndarray

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        l0 = np.atleast_1d(np.asarray(self.l0, dtype=float)).ravel()
        if L.shape[0] != len(l0):
            raise DomainError(f"L has {L.shape[0]} rows but l0 has {len(l0)} entries")
        if not (np.all(np.isfinite(L)) and np.all(np.isfinite(l0))):
            raise DomainError("L and l0 must be finite")
        r = L.shape[0]
        if np.linalg.matrix_rank(L) != r or r >= L.shape[1] + 1:
            raise DomainError(f"L must have full row rank r < k + 1 (got shape {L.shape})")
        if np.linalg.matrix_rank(np.column_stack([L, l0])) != r:
            raise DomainError("rank([L, l0]) must equal r")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "l0", l0)

    @classmethod
    def dispersion(cls, phi0: float, k: int) -> "LinearHypothesis":
        """H0: phi = phi0 for a model with k regression coefficients."""
        L = np.zeros((1, k + 1))
        L[0, k] = 1.0
        return cls(L=L, l0=[phi0])

    @property
    def r(self) -> int:
        return self.L.shape[0]

    def _check(self, eta_vec: np.ndarray) -> np.ndarray:
        eta_vec = np.atleast_1d(np.asarray(eta_vec, dtype=float))
        if self.L.shape[1] > len(eta_vec):
            raise DomainError(
                f"L has {self.L.shape[1]} columns but eta has {len(eta_vec)} entries"
            )
        return eta_vec

    def m(self, eta_vec: np.ndarray) -> np.ndarray:
        eta_vec = self._check(eta_vec)
        return self.L @ eta_vec[: self.L.shape[1]] - self.l0

    def jacobian(self, eta_vec: np.ndarray) -> np.ndarray:
        eta_vec = self._check(eta_vec)
        M = np.zeros((len(eta_vec), self.r))
        M[: self.L.shape[1], :] = self.L.T
        return M

    def transformed(self, A: np.ndarray) -> "LinearHypothesis":
        """The same hypothesis written as (A L, A l0)."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return LinearHypothesis(L=A @ self.L, l0=A @ self.l0)


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    df: int
    p_value: float
    reject_at: Dict[float, bool] = field(default_factory=dict)


def _null_matrix(hypothesis: Hypothesis, eta_vec: np.ndarray, sigma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    M = hypothesis.jacobian(eta_vec)
    if M.shape[0] != sigma.shape[0]:
        raise DomainError(f"M has {M.shape[0]} rows but Sigma is {sigma.shape[0]}x{sigma.shape[1]}")
    return M, M.T @ sigma @ M


def wald_value(hypothesis: Hypothesis, eta_vec: np.ndarray, sigma: np.ndarray, n: int) -> float:
    """n m(eta)^T [M^T Sigma M]^{-1} m(eta)."""
    eta_vec = np.asarray(eta_vec, dtype=float)
    _, middle = _null_matrix(hypothesis, eta_vec, sigma)
    return float(n * quadratic_form_inverse(middle, hypothesis.m(eta_vec), name="M^T Sigma M"))


def wald_statistic(
    fit: MdpdeFit, hypothesis: Hypothesis, levels: Sequence[float] = REPORT_LEVELS
) -> WaldResult:
    """
    Wald-type statistic W_n with its chi-square_r p-value.

    Args:
        fit: converged MDPDE fit carrying the empirical sandwich
        hypothesis: H0: m(eta) = 0
        levels: significance levels for the reject_at map

    Returns:
        WaldResult
    """
    if not fit.converged:
        raise PreconditionError("Wald test needs a converged fit")
    if fit.sandwich is None:
        raise Singular("fit has no sandwich covariance (J was singular)")
    statistic = max(0.0, wald_value(hypothesis, fit.eta_hat.to_vector(), fit.sigma_hat, fit.n_obs))
    p_value = float(chisq_sf(hypothesis.r, statistic))
    reject = {float(level): bool(statistic > chisq_critical(hypothesis.r, level)) for level in levels}
    return WaldResult(statistic=statistic, df=hypothesis.r, p_value=p_value, reject_at=reject)


def poisson_weights(delta: float, tol: float = SERIES_TOL, max_terms: int = SERIES_MAX_TERMS):
    """Mixing weights e^{-delta/2} (delta/2)^v / v! of the noncentral chi-square series."""
    return _poisson_weights(delta / 2.0, tol=tol, max_terms=max_terms)


def noncentral_chisq_sf(r: int, delta: float, c: float) -> float:
    """P(chi2_r(delta) > c) as a Poisson mixture of central chi-square tails."""
    if r < 1:
        raise DomainError(f"degrees of freedom must be >= 1 (got {r})")
    if not delta >= 0 or not c >= 0:
        raise DomainError(f"delta and c must be >= 0 (got delta={delta}, c={c})")
    if c == 0:
        return 1.0
    if delta == 0:
        return float(chisq_sf(r, c))
    idx, weights = poisson_weights(delta)
    tails = chisq_sf(r + 2.0 * idx, c)
    return float(np.clip(np.sum(weights * tails), 0.0, 1.0))


def _eta(eta, model: GlmModel) -> Eta:
    if isinstance(eta, Eta):
        return eta.validate(model)
    return Eta.from_vector(np.atleast_1d(np.asarray(eta, dtype=float)), model)


def _require_null(hypothesis: Hypothesis, eta0: Eta) -> None:
    m0 = hypothesis.m(eta0.to_vector())
    if np.max(np.abs(m0)) > 1e-10 * (1.0 + np.max(np.abs(eta0.to_vector()))):
        raise PreconditionError(f"eta0 does not satisfy the null hypothesis (m = {m0})")


def _null_projection(model, covariate_dist, eta0: Eta, hypothesis, alpha) -> Tuple[np.ndarray, np.ndarray]:
    """M and M^T Sigma_alpha(eta0) M at the null value."""
    sigma = sandwich_analytic(model, covariate_dist, eta0, alpha).Sigma
    return _null_matrix(hypothesis, eta0.to_vector(), sigma)


def q_value(
    model: GlmModel,
    covariate_dist: CovariateDistribution,
    hypothesis: Hypothesis,
    eta_m: np.ndarray,
    eta_sigma: np.ndarray,
    alpha: float,
) -> float:
    """q_{eta_m}(eta_sigma) = m(eta_m)^T [M^T Sigma_alpha M (at eta_sigma)]^{-1} m(eta_m)."""
    sigma = sandwich_analytic(model, covariate_dist, Eta.from_vector(eta_sigma, model), alpha).Sigma
    _, middle = _null_matrix(hypothesis, np.asarray(eta_sigma, dtype=float), sigma)
    return quadratic_form_inverse(middle, hypothesis.m(eta_m), name="M^T Sigma M")


def _power_parts(model, covariate_dist, eta_star, hypothesis, alpha, derivative) -> Tuple[float, float]:
    """(q_{eta*}(eta*), sigma(eta*))."""
    if derivative not in DERIVATIVE_MODES:
        raise DomainError(f"derivative must be one of {DERIVATIVE_MODES} (got {derivative!r})")
    eta_star = _eta(eta_star, model)
    star = eta_star.to_vector()
    if np.allclose(hypothesis.m(star), 0.0, rtol=0.0, atol=1e-12):
        raise PreconditionError("eta* satisfies the null hypothesis; power needs m(eta*) != 0")
    sigma_star = sandwich_analytic(model, covariate_dist, eta_star, alpha).Sigma
    _, middle = _null_matrix(hypothesis, star, sigma_star)
    q = quadratic_form_inverse(middle, hypothesis.m(star), name="M^T Sigma M")

    if derivative == "diagonal":
        def q_map(vec):
            return q_value(model, covariate_dist, hypothesis, vec, vec, alpha)
    else:
        def q_map(vec):
            return quadratic_form_inverse(middle, hypothesis.m(vec), name="M^T Sigma M")

    grad = central_gradient(q_map, star)
    variance = float(grad @ sigma_star @ grad)
    if not variance > 0:
        raise Singular(f"power variance sigma^2(eta*) is not positive ({variance:.3g})")
    return q, np.sqrt(variance)


def power_fixed_alternative(
    model: GlmModel,
    covariate_dist: CovariateDistribution,
    eta_star,
    hypothesis: Hypothesis,
    n: int,
    level: float = DEFAULT_LEVEL,
    alpha: float = 0.0,
    derivative: str = "diagonal",
) -> float:
    """
    Approximate power 1 - Phi((chi2_{r,level} / sqrt(n) - sqrt(n) q) / sigma) at a
    fixed alternative eta*.
    """
    if n < 1:
        raise DomainError(f"n must be >= 1 (got {n})")
    q, sigma = _power_parts(model, covariate_dist, eta_star, hypothesis, alpha, derivative)
    c = chisq_critical(hypothesis.r, level)
    root = np.sqrt(n)
    return float(1.0 - normal_cdf((c / root - root * q) / sigma))


def required_sample_size(
    model: GlmModel,
    covariate_dist: CovariateDistribution,
    eta_star,
    hypothesis: Hypothesis,
    target_power: float,
    level: float = DEFAULT_LEVEL,
    alpha: float = 0.0,
    derivative: str = "diagonal",
) -> int:
    """
    Smallest n = floor(n*) + 1 whose approximate power reaches target_power.

    n* solves q n + z sigma sqrt(n) - chi2_{r,level} = 0 with z = Phi^{-1}(1 - target_power).
    """
    if not 0.0 < target_power < 1.0:
        raise DomainError(f"target power must lie in (0, 1) (got {target_power})")
    q, sigma = _power_parts(model, covariate_dist, eta_star, hypothesis, alpha, derivative)
    c = chisq_critical(hypothesis.r, level)
    z = normal_quantile(1.0 - target_power)
    root = (-z * sigma + np.sqrt(z * z * sigma * sigma + 4.0 * q * c)) / (2.0 * q)
    n_star = root * root
    logger.debug(f"n* = {n_star:.4f} (q={q:.4g}, sigma={sigma:.4g})")
    return int(np.floor(n_star)) + 1


def contiguous_noncentrality(
    model: GlmModel,
    covariate_dist: CovariateDistribution,
    eta0,
    hypothesis: Hypothesis,
    d=None,
    alpha: float = 0.0,
    d_star=None,
) -> float:
    """
    d^T M [M^T Sigma M]^{-1} M^T d for eta_n = eta0 + d / sqrt(n), or
    d*^T [M^T Sigma M]^{-1} d* for m(eta_n) = d* / sqrt(n).
    """
    eta0 = _eta(eta0, model)
    _require_null(hypothesis, eta0)
    M, middle = _null_projection(model, covariate_dist, eta0, hypothesis, alpha)
    if (d is None) == (d_star is None):
        raise DomainError("give exactly one of d and d_star")
    if d is not None:
        d = np.atleast_1d(np.asarray(d, dtype=float))
        if d.shape != (M.shape[0],):
            raise DomainError(f"d must have {M.shape[0]} entries (got {d.shape})")
        shift = M.T @ d
    else:
        shift = np.atleast_1d(np.asarray(d_star, dtype=float))
        if shift.shape != (hypothesis.r,):
            raise DomainError(f"d_star must have {hypothesis.r} entries (got {shift.shape})")
    return quadratic_form_inverse(middle, shift, name="M^T Sigma M")


def contiguous_power(
    model: GlmModel,
    covariate_dist: CovariateDistribution,
    eta0,
    hypothesis: Hypothesis,
    d=None,
    level: float = DEFAULT_LEVEL,
    alpha: float = 0.0,
    d_star=None,
) -> float:
    """Asymptotic power under eta_n = eta0 + d / sqrt(n) (or the d* form)."""
    delta = contiguous_noncentrality(model, covariate_dist, eta0, hypothesis, d, alpha, d_star)
    return noncentral_chisq_sf(hypothesis.r, delta, chisq_critical(hypothesis.r, level))


def contaminated_noncentrality(
    model: GlmModel,
    covariate_dist: CovariateDistribution,
    eta0,
    hypothesis: Hypothesis,
    d,
    epsilon: float,
    point,
    alpha: float = 0.0,
) -> float:
    """Noncentrality with d replaced by d + epsilon IF(point)."""
    from dpdglm.robust import if_estimator

    if epsilon < 0:
        raise DomainError(f"epsilon must be >= 0 (got {epsilon})")
    eta0 = _eta(eta0, model)
    d = np.atleast_1d(np.asarray(d, dtype=float))
    shifted = d if epsilon == 0 else d + epsilon * if_estimator(model, covariate_dist, eta0, alpha, point)
    return contiguous_noncentrality(model, covariate_dist, eta0, hypothesis, shifted, alpha)


def contaminated_contiguous_power(
    model: GlmModel,
    covariate_dist: CovariateDistribution,
    eta0,
    hypothesis: Hypothesis,
    d,
    epsilon: float,
    point,
    level: float = DEFAULT_LEVEL,
    alpha: float = 0.0,
) -> float:
    """
    Asymptotic power under contiguous alternatives contaminated at `point`
    with weight epsilon / sqrt(n).
    """
    delta = contaminated_noncentrality(model, covariate_dist, eta0, hypothesis, d, epsilon, point, alpha)
    return noncentral_chisq_sf(hypothesis.r, delta, chisq_critical(hypothesis.r, level))


def contaminated_level(
    model: GlmModel,
    covariate_dist: CovariateDistribution,
    eta0,
    hypothesis: Hypothesis,
    epsilon: float,
    point,
    level: float = DEFAULT_LEVEL,
    alpha: float = 0.0,
) -> float:
    """Asymptotic level under the contaminated null (d = 0)."""
    eta0 = _eta(eta0, model)
    zero = np.zeros(len(eta0.to_vector()))
    return contaminated_contiguous_power(
        model, covariate_dist, eta0, hypothesis, zero, epsilon, point, level, alpha
    )
