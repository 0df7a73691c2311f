"""
Shared numerical helpers: chi-square and normal distribution functions,
Gauss-Hermite rules, symmetric positive definite solves, finite differences
and Poisson mixing weights for noncentral chi-square series.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Tuple

import numpy as np
from scipy import linalg
from scipy import special

from dpdglm.config import FD_REL_STEP, MAX_CONDITION, SERIES_MAX_TERMS, SERIES_TOL
from dpdglm.errors import DomainError, NotPositiveDefinite, Singular

logger = logging.getLogger(__name__)


def chisq_sf(r, c):
    """Upper tail P(chi2_r > c) via the regularized upper incomplete gamma."""
    r = np.asarray(r, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(r <= 0):
        raise DomainError(f"degrees of freedom must be positive (got {r})")
    if np.any(c < 0):
        raise DomainError(f"chi-square argument must be >= 0 (got {c})")
    out = special.gammaincc(r / 2.0, c / 2.0)
    return float(out) if out.ndim == 0 else out


def chisq_quantile(r, p):
    """Lower-tail quantile: the c with P(chi2_r <= c) = p."""
    _check_probability(p)
    if r <= 0:
        raise DomainError(f"degrees of freedom must be positive (got {r})")
    return float(2.0 * special.gammaincinv(r / 2.0, p))


def chisq_critical(r, level) -> float:
    """Upper critical value chi2_{r,level}, i.e. P(chi2_r > c) = level."""
    _check_probability(level)
    if r <= 0:
        raise DomainError(f"degrees of freedom must be positive (got {r})")
    return float(2.0 * special.gammainccinv(r / 2.0, level))


def normal_cdf(x):
    out = special.ndtr(np.asarray(x, dtype=float))
    return float(out) if out.ndim == 0 else out


def normal_quantile(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise DomainError(f"probability must lie in (0, 1) (got {p})")
    out = special.ndtri(p)
    return float(out) if out.ndim == 0 else out


def _check_probability(p) -> None:
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1) (got {p})")


@dataclass(frozen=True)
class QuadratureRule:
    """
    Nodes and weights integrating against the weight exp(-t^2).

    Exact for polynomials up to degree 2n - 1.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    @property
    def size(self) -> int:
        return len(self.nodes)

    def normal(self, mean: float, sd: float) -> Tuple[np.ndarray, np.ndarray]:
        """Points and probability weights for expectations under N(mean, sd^2)."""
        points = mean + np.sqrt(2.0) * sd * self.nodes
        return points, self.weights / np.sqrt(np.pi)


@lru_cache(maxsize=16)
def gauss_hermite(n: int) -> QuadratureRule:
    """Physicists' Gauss-Hermite rule with n nodes (cached, read-only arrays)."""
    if n < 1:
        raise DomainError(f"number of quadrature nodes must be >= 1 (got {n})")
    nodes, weights = np.polynomial.hermite.hermgauss(n)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes=nodes, weights=weights, kind=f"GaussHermite({n})")


def check_spd(A: np.ndarray, name: str = "matrix") -> np.ndarray:
    """
    Validate that A is symmetric positive definite and well conditioned.

    Returns the symmetrized matrix. Raises NotPositiveDefinite for a negative
    eigenvalue and Singular when the condition number exceeds MAX_CONDITION.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise DomainError(f"{name} must be square (got shape {A.shape})")
    if not np.all(np.isfinite(A)):
        raise Singular(f"{name} has non-finite entries")
    scale = max(np.max(np.abs(A)), np.finfo(float).tiny)
    if np.max(np.abs(A - A.T)) > 1e-8 * scale:
        raise DomainError(f"{name} is not symmetric")
    A = 0.5 * (A + A.T)
    eig = np.linalg.eigvalsh(A)
    top = eig[-1]
    if top <= 0:
        raise Singular(f"{name} is singular (largest eigenvalue {top:.3g})")
    if eig[0] < -1e-12 * top:
        raise NotPositiveDefinite(f"{name} is not positive definite (eigenvalue {eig[0]:.3g})")
    if eig[0] <= top / MAX_CONDITION:
        raise Singular(f"{name} is ill-conditioned (condition number > {MAX_CONDITION:.0e})")
    return A


def solve_spd(A: np.ndarray, b: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Solve A x = b for symmetric positive definite A through a Cholesky factor."""
    A = check_spd(A, name)
    try:
        factor = linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite(f"{name}: Cholesky factorization failed ({e})")
    b = np.asarray(b, dtype=float)
    return linalg.cho_solve(factor, b, check_finite=False)


def sandwich(J: np.ndarray, K: np.ndarray) -> np.ndarray:
    """J^{-1} K J^{-1} without forming an explicit inverse."""
    left = solve_spd(J, K, name="J")
    sigma = solve_spd(J, left.T, name="J").T
    return 0.5 * (sigma + sigma.T)


def quadratic_form_inverse(A: np.ndarray, v: np.ndarray, name: str = "matrix") -> float:
    """v^T A^{-1} v for symmetric positive definite A."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return float(v @ solve_spd(A, v, name=name))


def fd_steps(x: np.ndarray, rel_step: float = FD_REL_STEP) -> np.ndarray:
    return rel_step * (1.0 + np.abs(x))


def central_gradient(
    fn: Callable[[np.ndarray], float], x: np.ndarray, rel_step: float = FD_REL_STEP
) -> np.ndarray:
    """Central-difference gradient of a scalar function, h_j = rel_step * (1 + |x_j|)."""
    x = np.asarray(x, dtype=float)
    steps = fd_steps(x, rel_step)
    grad = np.empty_like(x)
    for j, h in enumerate(steps):
        up = x.copy()
        down = x.copy()
        up[j] += h
        down[j] -= h
        grad[j] = (fn(up) - fn(down)) / (2.0 * h)
    return grad


def central_jacobian(
    fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, rel_step: float = FD_REL_STEP
) -> np.ndarray:
    """Central-difference Jacobian, rows indexed by outputs."""
    x = np.asarray(x, dtype=float)
    steps = fd_steps(x, rel_step)
    columns = []
    for j, h in enumerate(steps):
        up = x.copy()
        down = x.copy()
        up[j] += h
        down[j] -= h
        columns.append((np.asarray(fn(up)) - np.asarray(fn(down))) / (2.0 * h))
    return np.column_stack(columns)


def stable_sum(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Pairwise sum along one axis, independent of memory layout."""
    values = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    return np.ascontiguousarray(values).sum(axis=-1)


def stable_mean(values: np.ndarray, axis: int = 0) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return stable_sum(values, axis=axis) / values.shape[axis]


def poisson_weights(
    mean: float, tol: float = SERIES_TOL, max_terms: int = SERIES_MAX_TERMS
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Poisson(mean) probabilities over a window around the mode.

    The window grows until the retained mass reaches 1 - tol or max_terms
    terms are used.

    Returns:
        (indices, weights) as arrays of equal length.
    """
    if not np.isfinite(mean) or mean < 0:
        raise DomainError(f"Poisson mean must be finite and >= 0 (got {mean})")
    mode = int(np.floor(mean))
    half = int(np.ceil(10.0 + 8.0 * np.sqrt(mean)))
    while True:
        lo = max(0, mode - half)
        hi = lo + min(max_terms, mode + half - lo + 1)
        idx = np.arange(lo, hi)
        logw = special.xlogy(idx, mean) - mean - special.gammaln(idx + 1.0)
        weights = np.exp(logw)
        total = weights.sum()
        if total >= 1.0 - tol:
            return idx, weights
        if len(idx) >= max_terms:
            logger.warning(
                f"Poisson series truncated at {max_terms} terms "
                f"(mean={mean:.4g}, retained mass {total:.12f})"
            )
            return idx, weights
        half *= 2
