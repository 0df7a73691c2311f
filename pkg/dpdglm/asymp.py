"""
Sandwich asymptotics J_alpha, K_alpha and Sigma_alpha = J^{-1} K J^{-1}, over
the empirical covariate measure or a covariate distribution G.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from itertools import product
from typing import Sequence, Tuple

import numpy as np

from dpdglm.config import (
    COVARIATE_MC_DRAWS,
    COVARIATE_MC_SEED,
    COVARIATE_QUAD_NODES,
    MAX_TENSOR_DIM,
)
from dpdglm.dpd import check_alpha, gamma_arrays
from dpdglm.errors import DomainError, PreconditionError
from dpdglm.model import Eta, GlmModel, Sample
from dpdglm.numerics import gauss_hermite, sandwich

logger = logging.getLogger(__name__)


class CovariateDistribution(ABC):
    """Distribution G of the covariate vector x."""

    intercept: bool = False

    @property
    @abstractmethod
    def dim(self) -> int:
        """Length of x, including the intercept coordinate."""

    @abstractmethod
    def _raw_nodes(self) -> Tuple[np.ndarray, np.ndarray]:
        pass

    @abstractmethod
    def _raw_draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        pass

    def nodes(self) -> Tuple[np.ndarray, np.ndarray]:
        """Integration points (m x dim) and probability weights (m) for int . dG."""
        points, weights = self._raw_nodes()
        return self._with_intercept(points), weights

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n covariate vectors drawn from G, shape (n, dim)."""
        return self._with_intercept(self._raw_draw(rng, n))

    def _with_intercept(self, points: np.ndarray) -> np.ndarray:
        if not self.intercept:
            return points
        return np.column_stack([np.ones(len(points)), points])


@dataclass(frozen=True)
class UnivariateNormal(CovariateDistribution):
    mu_x: float = 0.0
    sd: float = 1.0
    intercept: bool = False

    def __post_init__(self):
        if not self.sd > 0:
            raise DomainError(f"covariate sd must be positive (got {self.sd})")

    @property
    def dim(self) -> int:
        return 1 + int(self.intercept)

    def _raw_nodes(self):
        points, weights = gauss_hermite(COVARIATE_QUAD_NODES).normal(self.mu_x, self.sd)
        return points[:, None], weights

    def _raw_draw(self, rng, n):
        return rng.normal(self.mu_x, self.sd, size=(n, 1))


@dataclass(frozen=True)
class ProductNormal(CovariateDistribution):
    """Independent normal coordinates; tensor Gauss-Hermite up to MAX_TENSOR_DIM, Monte Carlo beyond."""

    mu: Tuple[float, ...] = (0.0,)
    sd: Tuple[float, ...] = (1.0,)
    intercept: bool = False
    mc_draws: int = COVARIATE_MC_DRAWS

    def __post_init__(self):
        mu = tuple(float(v) for v in np.atleast_1d(self.mu))
        sd = tuple(float(v) for v in np.atleast_1d(self.sd))
        if len(sd) == 1 and len(mu) > 1:
            sd = sd * len(mu)
        if len(mu) != len(sd):
            raise DomainError(f"mu has {len(mu)} entries but sd has {len(sd)}")
        if any(s <= 0 for s in sd):
            raise DomainError(f"covariate sd must be positive (got {sd})")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sd", sd)

    @property
    def dim(self) -> int:
        return len(self.mu) + int(self.intercept)

    def _raw_nodes(self):
        if len(self.mu) > MAX_TENSOR_DIM:
            rng = np.random.default_rng(COVARIATE_MC_SEED)
            logger.debug(f"Monte Carlo covariate rule with {self.mc_draws} draws")
            return self._raw_draw(rng, self.mc_draws), np.full(self.mc_draws, 1.0 / self.mc_draws)
        rule = gauss_hermite(COVARIATE_QUAD_NODES)
        axes = [rule.normal(m, s) for m, s in zip(self.mu, self.sd)]
        points = np.array(list(product(*[a[0] for a in axes])))
        weights = np.prod(np.array(list(product(*[a[1] for a in axes]))), axis=1)
        return points, weights

    def _raw_draw(self, rng, n):
        return rng.normal(self.mu, self.sd, size=(n, len(self.mu)))


@dataclass(frozen=True, eq=False)
class Empirical(CovariateDistribution):
    """Equal-weight measure on a fixed set of covariate vectors."""

    X: np.ndarray = field(default_factory=lambda: np.empty((0, 1)))
    intercept: bool = False

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if len(X) == 0:
            raise DomainError("empirical covariate distribution needs at least one point")
        object.__setattr__(self, "X", X)

    @property
    def dim(self) -> int:
        return self.X.shape[1] + int(self.intercept)

    def _raw_nodes(self):
        n = len(self.X)
        return self.X, np.full(n, 1.0 / n)

    def _raw_draw(self, rng, n):
        return self.X[rng.integers(0, len(self.X), size=n)]


@dataclass(frozen=True)
class SandwichMatrices:
    J: np.ndarray
    K: np.ndarray
    Sigma: np.ndarray


def information_blocks(
    model: GlmModel, X: np.ndarray, weights: np.ndarray, eta: Eta, alpha: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    J and K integrated against the discrete covariate measure sum_i w_i delta_{x_i}.
    """
    alpha = check_alpha(alpha)
    eta.validate(model, X.shape[1])
    lp = X @ eta.beta
    first = gamma_arrays(model, lp, eta.phi, alpha)
    second = gamma_arrays(model, lp, eta.phi, 2.0 * alpha)

    def assemble(c11, c12, c22):
        outer = np.einsum("i,ij,ik->jk", weights * c11, X, X)
        if c22 is None:
            return outer
        cross = (weights * c12) @ X
        corner = np.sum(weights * c22)
        return np.block([[outer, cross[:, None]], [cross[None, :], np.array([[corner]])]])

    J = assemble(first.g11, first.g12, first.g22)
    k11 = second.g11 - first.g1 * first.g1
    if model.dispersion_known:
        K = assemble(k11, None, None)
    else:
        K = assemble(
            k11,
            second.g12 - first.g1 * first.g2,
            second.g22 - first.g2 * first.g2,
        )
    return 0.5 * (J + J.T), 0.5 * (K + K.T)


def _sandwich(model, X, weights, eta, alpha) -> SandwichMatrices:
    J, K = information_blocks(model, X, weights, eta, alpha)
    return SandwichMatrices(J=J, K=K, Sigma=sandwich(J, K))


def sandwich_empirical(model: GlmModel, sample: Sample, eta: Eta, alpha: float) -> SandwichMatrices:
    """J, K and Sigma averaged over the sample's covariates."""
    weights = np.full(sample.n, 1.0 / sample.n)
    return _sandwich(model, sample.X, weights, eta, alpha)


def sandwich_analytic(
    model: GlmModel, covariate_dist: CovariateDistribution, eta: Eta, alpha: float
) -> SandwichMatrices:
    """J, K and Sigma integrated over G."""
    X, weights = covariate_dist.nodes()
    return _sandwich(model, X, weights, eta, alpha)


def empirical_information(model: GlmModel, sample: Sample, eta: Eta, alpha: float) -> np.ndarray:
    """Empirical J alone, used as the Newton matrix by the estimator."""
    weights = np.full(sample.n, 1.0 / sample.n)
    J, _ = information_blocks(model, sample.X, weights, eta, alpha)
    return J


def fisher_information(
    model: GlmModel, covariate_dist: CovariateDistribution, eta: Eta
) -> np.ndarray:
    X, weights = covariate_dist.nodes()
    J, _ = information_blocks(model, X, weights, eta, 0.0)
    return J


def are(
    model: GlmModel,
    covariate_dist: CovariateDistribution,
    beta0: Sequence[float],
    alpha: float,
) -> float:
    """
    Asymptotic relative efficiency Sigma_0 / Sigma_alpha of the scalar MDPDE of beta.
    """
    if not model.dispersion_known:
        raise PreconditionError("ARE is defined for models with known dispersion")
    eta = Eta(beta=beta0)
    if eta.k != 1 or covariate_dist.dim != 1:
        raise PreconditionError(f"ARE needs a scalar beta (got k={eta.k})")
    base = sandwich_analytic(model, covariate_dist, eta, 0.0).Sigma[0, 0]
    robust = sandwich_analytic(model, covariate_dist, eta, alpha).Sigma[0, 0]
    return float(base / robust)
