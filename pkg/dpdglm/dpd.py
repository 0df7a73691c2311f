"""
Density power divergence kernels: gamma integrals, the Psi_alpha estimating
function and the empirical DPD objective.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import special

from dpdglm.config import (
    COUNT_CHUNK_CELLS,
    COUNT_MAX_WIDTH,
    COUNT_MIN_UPPER,
    COUNT_TAIL_RATIO,
    COUNT_TAIL_SDS,
    COUNT_WIDEN_STEPS,
    RESPONSE_QUAD_NODES,
)
from dpdglm.errors import DomainError, NonConvergence, PreconditionError
from dpdglm.model import Eta, GlmModel, Observation, Sample, Support
from dpdglm.numerics import gauss_hermite, stable_mean

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GammaArrays:
    """
    Integrals of f^power against 1, K1, K2 and their products, one entry per
    linear predictor. The dispersion entries are None when phi is known.
    """

    mass: np.ndarray
    g1: np.ndarray
    g11: np.ndarray
    g2: Optional[np.ndarray] = None
    g12: Optional[np.ndarray] = None
    g22: Optional[np.ndarray] = None


@dataclass(frozen=True)
class GammaSet:
    gamma1: float
    gamma11: float
    gamma2: Optional[float] = None
    gamma12: Optional[float] = None
    gamma22: Optional[float] = None


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not np.isfinite(alpha) or alpha < 0:
        raise DomainError(f"alpha must be >= 0 (got {alpha})")
    return alpha


def density_power(model: GlmModel, y, linear_predictor, phi, alpha: float):
    """f^alpha computed as exp(alpha log f); exactly 1 at alpha = 0."""
    if alpha == 0:
        return np.ones(np.broadcast(np.asarray(y), np.asarray(linear_predictor)).shape)
    return np.exp(alpha * model.log_density(y, linear_predictor, phi))


def gamma_arrays(model: GlmModel, linear_predictors, phi, alpha: float) -> GammaArrays:
    """
    gamma_{j,alpha}(x) = int K_j f^{1+alpha} dy and
    gamma_{jh,alpha}(x) = int K_j K_h f^{1+alpha} dy for every linear predictor.

    Pass 2 * alpha to get the gamma_{jh,2 alpha} entries used by K_alpha.
    """
    alpha = check_alpha(alpha)
    lp = np.atleast_1d(model.check_linear_predictor(linear_predictors)).astype(float)
    phi = model.resolve_phi(phi)
    if model.support is Support.COUNTS:
        return _count_moments(lp, 1.0 + alpha)
    return _real_line_moments(model, lp, phi, 1.0 + alpha)


def _count_moments(lp: np.ndarray, power: float) -> GammaArrays:
    mu = np.exp(lp)
    sd = np.sqrt(mu)
    lo = np.maximum(0.0, np.floor(mu - COUNT_TAIL_SDS * sd))
    hi = np.maximum(float(COUNT_MIN_UPPER), np.ceil(mu + COUNT_TAIL_SDS * sd))
    mass = np.zeros_like(lp)
    g1 = np.zeros_like(lp)
    g11 = np.zeros_like(lp)
    pending = np.arange(len(lp))
    for attempt in range(COUNT_WIDEN_STEPS + 1):
        widths = hi[pending] - lo[pending] + 1
        if np.any(widths > COUNT_MAX_WIDTH):
            raise NonConvergence(
                f"count support too wide to sum (mean {mu[pending].max():.3g})"
            )
        done = _count_window_sums(lp, mu, lo, hi, power, pending, mass, g1, g11)
        pending = pending[~done]
        if not len(pending):
            return GammaArrays(mass=mass, g1=g1, g11=g11)
        logger.warning(f"Widening count support for {len(pending)} linear predictors")
        width = hi[pending] - lo[pending]
        lo[pending] = np.maximum(0.0, lo[pending] - width)
        hi[pending] = hi[pending] + width
    raise NonConvergence(
        f"count-support truncation did not reach relative tail {COUNT_TAIL_RATIO}"
    )


def _count_window_sums(lp, mu, lo, hi, power, rows, mass, g1, g11) -> np.ndarray:
    """Sum the window [lo, hi] for the given rows; returns a mask of rows whose tails are negligible."""
    done = np.zeros(len(rows), dtype=bool)
    widths = (hi[rows] - lo[rows] + 1).astype(int)
    order = np.argsort(widths, kind="stable")
    start = 0
    while start < len(order):
        # widest row in the block sets the block width
        stop = start + 1
        while stop < len(order) and (stop - start + 1) * widths[order[stop]] <= COUNT_CHUNK_CELLS:
            stop += 1
        block = order[start:stop]
        idx = rows[block]
        width = widths[block].max()
        y = lo[idx, None] + np.arange(width)[None, :]
        inside = y <= hi[idx, None]
        logf = y * lp[idx, None] - mu[idx, None] - special.gammaln(y + 1.0)
        fp = np.where(inside, np.exp(power * logf), 0.0)
        k1 = y - mu[idx, None]
        weight = (1.0 + k1 * k1) * fp
        total = weight.sum(axis=1)
        last = weight[np.arange(len(idx)), widths[block] - 1]
        first = np.where(lo[idx] > 0, weight[:, 0], 0.0)
        done[block] = (last <= COUNT_TAIL_RATIO * total) & (first <= COUNT_TAIL_RATIO * total)
        mass[idx] = fp.sum(axis=1)
        g1[idx] = (k1 * fp).sum(axis=1)
        g11[idx] = (k1 * k1 * fp).sum(axis=1)
        start = stop
    return done


def _real_line_moments(model: GlmModel, lp: np.ndarray, phi: float, power: float) -> GammaArrays:
    # Substituting y = mu + phi sqrt(2 / power) t turns f^power into a Gauss-Hermite weight,
    # so every moment is free of mu.
    rule = gauss_hermite(RESPONSE_QUAD_NODES)
    spread = phi * np.sqrt(2.0 / power)
    resid = spread * rule.nodes
    scale = (2.0 * np.pi * phi * phi) ** (-power / 2.0) * spread
    w = rule.weights * scale
    mass = w.sum()
    exact = (2.0 * np.pi * phi * phi) ** ((1.0 - power) / 2.0) / np.sqrt(power)
    if abs(mass - exact) > 1e-10 * exact:
        raise NonConvergence(f"response quadrature lost accuracy (phi={phi})")
    k1 = resid / (phi * phi)
    k2 = resid * resid / phi**3 - 1.0 / phi
    ones = np.ones_like(lp)
    fields = dict(mass=mass * ones, g1=(w @ k1) * ones, g11=(w @ (k1 * k1)) * ones)
    if not model.dispersion_known:
        fields.update(g2=(w @ k2) * ones, g12=(w @ (k1 * k2)) * ones, g22=(w @ (k2 * k2)) * ones)
    return GammaArrays(**fields)


def gamma_set(model: GlmModel, x, eta: Eta, alpha: float) -> GammaSet:
    """gamma_{j,alpha} and gamma_{jh,alpha} at a single covariate vector."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    eta.validate(model, len(x))
    arrays = gamma_arrays(model, x @ eta.beta, eta.phi, alpha)

    def first(values):
        return None if values is None else float(values[0])

    return GammaSet(
        gamma1=float(arrays.g1[0]),
        gamma11=float(arrays.g11[0]),
        gamma2=first(arrays.g2),
        gamma12=first(arrays.g12),
        gamma22=first(arrays.g22),
    )


def psi_parts(
    model: GlmModel, y, linear_predictor, phi, alpha: float, gammas: GammaArrays
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Scalar pieces of Psi_alpha: gamma_1 - K1 f^alpha (multiplies x) and
    gamma_2 - K2 f^alpha. gammas must broadcast against linear_predictor.
    """
    fa = density_power(model, y, linear_predictor, phi, alpha)
    k1, k2 = model.score_components(y, linear_predictor, phi)
    beta_part = gammas.g1 - k1 * fa
    phi_part = None if k2 is None else gammas.g2 - k2 * fa
    return beta_part, phi_part


def psi_matrix(model: GlmModel, sample: Sample, eta: Eta, alpha: float) -> np.ndarray:
    """Psi_alpha for every observation, shape (n, k') with k' = len(eta)."""
    alpha = check_alpha(alpha)
    eta.validate(model, sample.k)
    lp = sample.X @ eta.beta
    gammas = gamma_arrays(model, lp, eta.phi, alpha)
    beta_part, phi_part = psi_parts(model, sample.y, lp, eta.phi, alpha, gammas)
    psi = beta_part[:, None] * sample.X
    if phi_part is not None:
        psi = np.column_stack([psi, phi_part])
    return psi


def psi_alpha(model: GlmModel, obs: Observation, eta: Eta, alpha: float) -> np.ndarray:
    """((gamma_1 - K1 f^alpha) x ; gamma_2 - K2 f^alpha) at one observation."""
    sample = Sample(X=np.atleast_2d(np.asarray(obs.x, dtype=float)), y=[obs.y])
    return psi_matrix(model, sample, eta, alpha)[0]


def mean_psi(model: GlmModel, sample: Sample, eta: Eta, alpha: float) -> np.ndarray:
    return stable_mean(psi_matrix(model, sample, eta, alpha), axis=0)


def objective_gradient_scale(alpha: float) -> float:
    """The objective's gradient equals this factor times mean Psi_alpha."""
    return 1.0 + check_alpha(alpha)


def dpd_objective(model: GlmModel, sample: Sample, eta: Eta, alpha: float) -> float:
    """
    (1/n) sum_i [ int f^{1+alpha}(y, x_i^T beta, phi) dy - (1 + 1/alpha) f^alpha(y_i, ...) ].

    Terms free of eta are dropped.
    """
    alpha = check_alpha(alpha)
    if alpha == 0:
        raise PreconditionError("the DPD objective needs alpha > 0; use negative_log_likelihood")
    eta.validate(model, sample.k)
    lp = sample.X @ eta.beta
    gammas = gamma_arrays(model, lp, eta.phi, alpha)
    fa = density_power(model, sample.y, lp, eta.phi, alpha)
    return float(stable_mean(gammas.mass - (1.0 + 1.0 / alpha) * fa))


def negative_log_likelihood(model: GlmModel, sample: Sample, eta: Eta) -> float:
    """The alpha = 0 counterpart of dpd_objective; its gradient is mean Psi_0."""
    eta.validate(model, sample.k)
    lp = sample.X @ eta.beta
    return float(-stable_mean(model.log_density(sample.y, lp, eta.phi)))
