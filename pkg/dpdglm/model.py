"""
Exponential-family GLMs with random covariates.

Two families are provided: Poisson regression (log link, phi = 1 known) and
normal linear regression (identity link, a(phi) = phi^2 so phi is the error
standard deviation).
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from dpdglm.config import PHI_FLOOR
from dpdglm.errors import DomainError, RankDeficient

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


class Family(str, Enum):
    POISSON = "poisson"
    NORMAL = "normal"


class Support(Enum):
    COUNTS = "counts"
    REAL_LINE = "real_line"


class Link(Enum):
    LOG = "log"
    IDENTITY = "identity"


class GlmModel(ABC):
    """
    Conditional density f(y | x^T beta, phi) of an exponential-family GLM.

    All methods are vectorised: y and linear predictors broadcast against each
    other, phi is a scalar.
    """

    family: Family
    support: Support
    link_kind: Link

    def __init__(self, known_phi: Optional[float] = None):
        if known_phi is not None:
            known_phi = self._check_phi_value(known_phi)
        self.known_phi = known_phi

    @property
    def dispersion_known(self) -> bool:
        return self.known_phi is not None

    def n_params(self, k: int) -> int:
        """Length of eta for a k-dimensional design."""
        return k if self.dispersion_known else k + 1

    def resolve_phi(self, phi: Optional[float]) -> float:
        """Dispersion to use in density evaluations."""
        if self.dispersion_known:
            if phi is not None and not np.isclose(phi, self.known_phi):
                raise DomainError(
                    f"{self.family.value} model has known phi={self.known_phi} (got {phi})"
                )
            return self.known_phi
        if phi is None:
            raise DomainError(f"{self.family.value} model needs a dispersion value")
        return self._check_phi_value(phi)

    @staticmethod
    def _check_phi_value(phi: float) -> float:
        phi = float(phi)
        if not np.isfinite(phi) or phi < PHI_FLOOR:
            raise DomainError(f"dispersion must be >= {PHI_FLOOR} (got {phi})")
        return phi

    def check_linear_predictor(self, linear_predictor) -> np.ndarray:
        lp = np.asarray(linear_predictor, dtype=float)
        if not np.all(np.isfinite(lp)):
            raise DomainError("linear predictor must be finite")
        return lp

    @abstractmethod
    def check_response(self, y) -> np.ndarray:
        """Return y as a float array, raising DomainError outside the support."""

    @abstractmethod
    def theta(self, linear_predictor):
        """Canonical parameter."""

    @abstractmethod
    def cumulant(self, theta):
        """b(theta)."""

    @abstractmethod
    def dispersion_scale(self, phi: float) -> float:
        """a(phi)."""

    @abstractmethod
    def mean(self, linear_predictor):
        pass

    @abstractmethod
    def variance(self, linear_predictor, phi: Optional[float] = None):
        pass

    @abstractmethod
    def link(self, mu):
        pass

    @abstractmethod
    def link_derivative(self, mu):
        pass

    @abstractmethod
    def log_density(self, y, linear_predictor, phi: Optional[float] = None):
        pass

    @abstractmethod
    def score_components(
        self, y, linear_predictor, phi: Optional[float] = None
    ) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """(K1, K2) with K1 * x = d log f / d beta and K2 = d log f / d phi."""

    @abstractmethod
    def sample(self, rng: np.random.Generator, linear_predictor, phi: Optional[float] = None):
        """Draw y | x for each linear predictor."""

    def __repr__(self) -> str:
        if self.family is Family.POISSON or not self.dispersion_known:
            return f"{type(self).__name__}()"
        return f"{type(self).__name__}(known_phi={self.known_phi})"

    def __eq__(self, other) -> bool:
        return type(self) is type(other) and self.known_phi == other.known_phi

    def __hash__(self) -> int:
        return hash((type(self).__name__, self.known_phi))


class PoissonRegression(GlmModel):
    family = Family.POISSON
    support = Support.COUNTS
    link_kind = Link.LOG

    def __init__(self):
        super().__init__(known_phi=1.0)

    def check_response(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)) or np.any(y < 0) or np.any(y != np.floor(y)):
            raise DomainError("Poisson responses must be non-negative integers")
        return y

    def theta(self, linear_predictor):
        return self.check_linear_predictor(linear_predictor)

    def cumulant(self, theta):
        return np.exp(theta)

    def dispersion_scale(self, phi: float) -> float:
        return 1.0

    def mean(self, linear_predictor):
        return np.exp(self.check_linear_predictor(linear_predictor))

    def variance(self, linear_predictor, phi: Optional[float] = None):
        return self.mean(linear_predictor)

    def link(self, mu):
        return np.log(mu)

    def link_derivative(self, mu):
        return 1.0 / np.asarray(mu, dtype=float)

    def log_density(self, y, linear_predictor, phi: Optional[float] = None):
        self.resolve_phi(phi)
        y = self.check_response(y)
        lp = self.check_linear_predictor(linear_predictor)
        return y * lp - np.exp(lp) - special.gammaln(y + 1.0)

    def score_components(self, y, linear_predictor, phi: Optional[float] = None):
        self.resolve_phi(phi)
        y = self.check_response(y)
        lp = self.check_linear_predictor(linear_predictor)
        return y - np.exp(lp), None

    def sample(self, rng, linear_predictor, phi: Optional[float] = None):
        # numpy draws by inversion below mean 10 and by transformed rejection above
        return rng.poisson(self.mean(linear_predictor)).astype(float)


class NormalLinearRegression(GlmModel):
    family = Family.NORMAL
    support = Support.REAL_LINE
    link_kind = Link.IDENTITY

    def check_response(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise DomainError("normal responses must be finite")
        return y

    def theta(self, linear_predictor):
        return self.check_linear_predictor(linear_predictor)

    def cumulant(self, theta):
        return 0.5 * np.square(theta)

    def dispersion_scale(self, phi: float) -> float:
        return phi * phi

    def mean(self, linear_predictor):
        return self.check_linear_predictor(linear_predictor)

    def variance(self, linear_predictor, phi: Optional[float] = None):
        phi = self.resolve_phi(phi)
        lp = self.check_linear_predictor(linear_predictor)
        return np.full_like(lp, phi * phi)

    def link(self, mu):
        return np.asarray(mu, dtype=float)

    def link_derivative(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def log_density(self, y, linear_predictor, phi: Optional[float] = None):
        phi = self.resolve_phi(phi)
        resid = self.check_response(y) - self.check_linear_predictor(linear_predictor)
        return -0.5 * LOG_2PI - np.log(phi) - resid * resid / (2.0 * phi * phi)

    def score_components(self, y, linear_predictor, phi: Optional[float] = None):
        phi = self.resolve_phi(phi)
        resid = self.check_response(y) - self.check_linear_predictor(linear_predictor)
        k1 = resid / (phi * phi)
        if self.dispersion_known:
            return k1, None
        return k1, resid * resid / phi**3 - 1.0 / phi

    def sample(self, rng, linear_predictor, phi: Optional[float] = None):
        phi = self.resolve_phi(phi)
        return rng.normal(self.mean(linear_predictor), phi)


def make_model(family: str, phi: Optional[float] = None) -> GlmModel:
    """
    Build a model from its family name.

    Args:
        family: "poisson" or "normal"
        phi: fixes the normal dispersion; Poisson accepts only None or 1

    Returns:
        GlmModel instance
    """
    try:
        family = Family(str(family).lower())
    except ValueError:
        raise DomainError(f"unknown family {family!r} (expected poisson or normal)")
    if family is Family.POISSON:
        if phi is not None and float(phi) != 1.0:
            raise DomainError(f"Poisson dispersion is fixed at 1 (got {phi})")
        return PoissonRegression()
    return NormalLinearRegression(known_phi=phi)


def log_density(model: GlmModel, y, linear_predictor, phi: Optional[float] = None):
    """log f(y, x^T beta, phi)."""
    return model.log_density(y, linear_predictor, phi)


def score_components(model: GlmModel, y, linear_predictor, phi: Optional[float] = None):
    """(K1, K2); K2 is None when the dispersion is known."""
    return model.score_components(y, linear_predictor, phi)


@dataclass(frozen=True)
class Eta:
    """Parameter vector eta = (beta, phi); phi is None for known dispersion."""

    beta: np.ndarray
    phi: Optional[float] = None

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()
        if beta.ndim != 1 or not np.all(np.isfinite(beta)):
            raise DomainError(f"beta must be a finite vector (got {self.beta!r})")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        if self.phi is not None:
            object.__setattr__(self, "phi", float(self.phi))

    @property
    def k(self) -> int:
        return len(self.beta)

    def to_vector(self) -> np.ndarray:
        if self.phi is None:
            return np.array(self.beta, dtype=float)
        return np.append(self.beta, self.phi)

    @classmethod
    def from_vector(cls, vector: Sequence[float], model: GlmModel) -> "Eta":
        vector = np.asarray(vector, dtype=float)
        if model.dispersion_known:
            return cls(beta=vector)
        return cls(beta=vector[:-1], phi=float(vector[-1]))

    def validate(self, model: GlmModel, k: Optional[int] = None) -> "Eta":
        if model.dispersion_known and self.phi is not None:
            raise DomainError(f"{model.family.value} model has known dispersion; drop phi")
        if not model.dispersion_known:
            if self.phi is None:
                raise DomainError(f"{model.family.value} model needs phi in eta")
            model.resolve_phi(self.phi)
        if k is not None and self.k != k:
            raise DomainError(f"beta has length {self.k}, design has {k} columns")
        return self


@dataclass(frozen=True)
class Observation:
    y: float
    x: np.ndarray


@dataclass(frozen=True)
class Sample:
    """Design matrix X (n x k) with responses y (n)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != len(y):
            raise DomainError(f"design has shape {X.shape} but there are {len(y)} responses")
        if not np.all(np.isfinite(X)):
            raise DomainError("covariates must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_observations(cls, observations: Iterable[Observation]) -> "Sample":
        observations = list(observations)
        if not observations:
            raise DomainError("sample is empty")
        X = np.vstack([np.atleast_1d(np.asarray(o.x, dtype=float)) for o in observations])
        y = np.array([o.y for o in observations], dtype=float)
        return cls(X=X, y=y)

    def observations(self) -> list:
        return [Observation(y=float(y), x=x.copy()) for y, x in zip(self.y, self.X)]

    def check_design(self, model: GlmModel) -> None:
        """Require responses in the support, n >= k + 1 and a full-rank design."""
        model.check_response(self.y)
        if self.n < self.k + 1:
            raise RankDeficient(f"need at least {self.k + 1} observations (got {self.n})")
        rank = np.linalg.matrix_rank(self.X)
        if rank < self.k:
            raise RankDeficient(f"design matrix has rank {rank} < {self.k} columns")

    def with_design(self, X: np.ndarray) -> "Sample":
        return Sample(X=X, y=self.y)

