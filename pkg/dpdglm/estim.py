"""
Minimum density power divergence estimation.

The estimating equations mean_i Psi_alpha(y_i, x_i, eta) = 0 are solved by damped
Newton steps that use the empirical J_alpha as the Jacobian. When such a step
cannot reduce ||mean Psi||, a finite-difference Newton step is tried, then a
gradient step on the DPD objective (the negative log-likelihood at alpha = 0).
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from dpdglm.asymp import SandwichMatrices, empirical_information, sandwich_empirical
from dpdglm.config import (
    MAX_BETA_NORM,
    MAX_CONDITION,
    MAX_HALVINGS,
    MAX_LINEAR_PREDICTOR,
    PHI_FLOOR,
    FitOptions,
)
from dpdglm.dpd import (
    check_alpha,
    dpd_objective,
    mean_psi,
    negative_log_likelihood,
    objective_gradient_scale,
)
from dpdglm.errors import NonConvergence, PreconditionError, SeparationError, Singular
from dpdglm.model import Eta, GlmModel, Sample, Support
from dpdglm.numerics import central_jacobian, solve_spd

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MdpdeFit:
    """Fitted eta_hat_alpha with solver diagnostics and the empirical sandwich."""

    eta_hat: Eta
    alpha: float
    gradient_norm: float
    iterations: int
    converged: bool
    model: GlmModel
    n_obs: int
    sandwich: Optional[SandwichMatrices] = None

    @property
    def sigma_hat(self) -> Optional[np.ndarray]:
        return None if self.sandwich is None else self.sandwich.Sigma

    @property
    def standard_errors(self) -> np.ndarray:
        """sqrt(diag(Sigma_hat) / n); NaN when the sandwich is unavailable."""
        if self.sandwich is None:
            return np.full(len(self.eta_hat.to_vector()), np.nan)
        return np.sqrt(np.clip(np.diag(self.sandwich.Sigma), 0.0, None) / self.n_obs)


def default_start(model: GlmModel, sample: Sample) -> Eta:
    """beta = 0 and, for unknown dispersion, phi = sample standard deviation of y."""
    beta = np.zeros(sample.k)
    if model.dispersion_known:
        return Eta(beta=beta)
    sd = float(np.std(sample.y, ddof=1)) if sample.n > 1 else 0.0
    return Eta(beta=beta, phi=sd if sd > PHI_FLOOR else 1.0)


def check_separation(sample: Sample) -> None:
    """
    Raise SeparationError if some direction v sends x_i^T v to -inf on zero
    counts while leaving positive counts untouched; the Poisson objectives then
    keep decreasing along v.
    """
    zero = sample.y == 0
    if not zero.any():
        return
    X0 = sample.X[zero]
    Xpos = sample.X[~zero]
    result = optimize.linprog(
        c=X0.sum(axis=0),
        A_ub=X0,
        b_ub=np.zeros(len(X0)),
        A_eq=Xpos if len(Xpos) else None,
        b_eq=np.zeros(len(Xpos)) if len(Xpos) else None,
        bounds=[(-1.0, 1.0)] * sample.k,
        method="highs",
    )
    scale = max(1.0, float(np.abs(sample.X).max()))
    if result.status == 0 and result.fun < -1e-7 * scale:
        raise SeparationError(
            f"zero counts are separated along direction {np.round(result.x, 6).tolist()}"
        )


class _EquationSolver:
    def __init__(self, model: GlmModel, sample: Sample, alpha: float, options: FitOptions):
        self.model = model
        self.sample = sample
        self.alpha = alpha
        self.options = options

    def mean_psi(self, vec: np.ndarray) -> np.ndarray:
        return mean_psi(self.model, self.sample, Eta.from_vector(vec, self.model), self.alpha)

    def objective(self, vec: np.ndarray) -> float:
        eta = Eta.from_vector(vec, self.model)
        if self.alpha == 0:
            return negative_log_likelihood(self.model, self.sample, eta)
        return dpd_objective(self.model, self.sample, eta, self.alpha)

    def admissible(self, vec: np.ndarray) -> bool:
        if not np.all(np.isfinite(vec)):
            return False
        k = self.sample.k
        if not self.model.dispersion_known and vec[k] <= PHI_FLOOR:
            return False
        lp = self.sample.X @ vec[:k]
        return bool(np.max(np.abs(lp)) <= MAX_LINEAR_PREDICTOR)

    def evaluate(self, vec: np.ndarray) -> Optional[np.ndarray]:
        if not self.admissible(vec):
            return None
        try:
            return self.mean_psi(vec)
        except NonConvergence:
            return None

    def scoring_step(self, vec: np.ndarray, psi: np.ndarray) -> Optional[np.ndarray]:
        eta = Eta.from_vector(vec, self.model)
        try:
            J = empirical_information(self.model, self.sample, eta, self.alpha)
            return solve_spd(J, psi, name="J")
        except (Singular, NonConvergence) as e:
            logger.debug(f"Scoring step unavailable: {e}")
            return None

    def newton_fd_step(self, vec: np.ndarray, psi: np.ndarray) -> Optional[np.ndarray]:
        try:
            jac = central_jacobian(self.mean_psi, vec)
            if np.linalg.cond(jac) > MAX_CONDITION:
                return None
            return np.linalg.solve(jac, psi)
        except (np.linalg.LinAlgError, NonConvergence, ValueError) as e:
            logger.debug(f"Finite-difference Newton step unavailable: {e}")
            return None

    def line_search(
        self, vec: np.ndarray, step: Optional[np.ndarray], psi: np.ndarray
    ) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Halve the step until ||mean Psi||_2 decreases."""
        if step is None or not np.all(np.isfinite(step)):
            return None
        merit = np.linalg.norm(psi)
        t = 1.0
        for _ in range(MAX_HALVINGS):
            trial = vec - t * step
            trial_psi = self.evaluate(trial)
            if trial_psi is not None and np.linalg.norm(trial_psi) < merit:
                return trial, trial_psi
            t *= 0.5
        return None

    def descent_step(self, vec: np.ndarray, psi: np.ndarray) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Armijo backtracking along minus the objective gradient."""
        grad = objective_gradient_scale(self.alpha) * psi
        slope = float(grad @ grad)
        if slope == 0:
            return None
        current = self.objective(vec)
        t = 1.0 / max(1.0, np.sqrt(slope))
        for _ in range(2 * MAX_HALVINGS):
            trial = vec - t * grad
            if self.admissible(trial):
                try:
                    value = self.objective(trial)
                    if value <= current - 1e-4 * t * slope:
                        return trial, self.mean_psi(trial)
                except NonConvergence:
                    pass
            t *= 0.5
        return None

    def run(self, start: np.ndarray) -> Tuple[np.ndarray, float, int]:
        tol = self.options.tol
        vec = np.array(start, dtype=float)
        psi = self.mean_psi(vec)
        norm = float(np.max(np.abs(psi)))
        iteration = 0
        while norm >= tol:
            if iteration >= self.options.max_iter:
                raise NonConvergence(
                    f"|mean psi| = {norm:.3g} after {iteration} iterations",
                    partial=(vec, norm, iteration),
                )
            iteration += 1
            accepted = self.line_search(vec, self.scoring_step(vec, psi), psi)
            if accepted is None and self.options.fallback:
                logger.debug(f"Iteration {iteration}: falling back to finite-difference Newton")
                accepted = self.line_search(vec, self.newton_fd_step(vec, psi), psi)
                if accepted is None:
                    logger.debug(f"Iteration {iteration}: falling back to gradient descent")
                    accepted = self.descent_step(vec, psi)
            if accepted is None:
                raise NonConvergence(
                    f"no step reduces the estimating equations (|mean psi| = {norm:.3g})",
                    partial=(vec, norm, iteration),
                )
            new_vec, psi = accepted
            if np.linalg.norm(new_vec[: self.sample.k]) > MAX_BETA_NORM:
                raise SeparationError(
                    f"|beta| exceeded {MAX_BETA_NORM:.0e}", partial=(new_vec, norm, iteration)
                )
            moved = float(np.max(np.abs(new_vec - vec)))
            vec = new_vec
            previous, norm = norm, float(np.max(np.abs(psi)))
            logger.debug(f"Iteration {iteration}: |mean psi| = {norm:.3e}, step = {moved:.3e}")
            # a tiny step that no longer halves |mean psi| is a stall
            if moved < self.options.step_tol and norm >= tol and norm > 0.5 * previous:
                raise NonConvergence(
                    f"stalled at |mean psi| = {norm:.3g} (step {moved:.1e})",
                    partial=(vec, norm, iteration),
                )
        return vec, norm, iteration


def _failed_fit(model, sample, alpha, state) -> MdpdeFit:
    vec, norm, iterations = state
    return MdpdeFit(
        eta_hat=Eta.from_vector(vec, model),
        alpha=alpha,
        gradient_norm=norm,
        iterations=iterations,
        converged=False,
        model=model,
        n_obs=sample.n,
    )


def fit_mdpde(
    model: GlmModel, sample: Sample, alpha: float, options: Optional[FitOptions] = None
) -> MdpdeFit:
    """
    Compute the MDPDE eta_hat_alpha.

    Args:
        model: GLM family
        sample: design and responses
        alpha: DPD tuning parameter (0 gives the MLE)
        options: tolerances, start point and fallback switch

    Returns:
        MdpdeFit with the empirical sandwich filled in

    Raises:
        RankDeficient, SeparationError, NonConvergence (with .partial set)
    """
    options = options or FitOptions()
    alpha = check_alpha(alpha)
    sample.check_design(model)
    if model.support is Support.COUNTS:
        try:
            check_separation(sample)
        except SeparationError as e:
            fallback = options.start or default_start(model, sample)
            e.partial = _failed_fit(model, sample, alpha, (fallback.to_vector(), np.nan, 0))
            raise
    primary = _starting_point(model, sample, alpha, options)
    starts = restart_points(model, sample, primary, options) if options.fallback else [primary]

    solver = _EquationSolver(model, sample, alpha, options)
    first_failure = None
    for attempt, start in enumerate(starts):
        try:
            vec, norm, iterations = solver.run(start.to_vector())
            break
        except NonConvergence as e:
            if isinstance(e.partial, tuple):
                e.partial = _failed_fit(model, sample, alpha, e.partial)
            elif e.partial is None:
                e.partial = _failed_fit(model, sample, alpha, (start.to_vector(), np.nan, 0))
            logger.debug(f"alpha={alpha}: start {attempt} failed ({e})")
            first_failure = first_failure or e
    else:
        raise first_failure
    if attempt:
        logger.info(f"alpha={alpha}: converged from restart point {attempt} of {len(starts) - 1}")
    eta_hat = Eta.from_vector(vec, model)
    logger.debug(f"alpha={alpha}: converged in {iterations} iterations")
    try:
        matrices = sandwich_empirical(model, sample, eta_hat, alpha)
    except Singular as e:
        logger.warning(f"alpha={alpha}: sandwich covariance unavailable ({e})")
        matrices = None
    return MdpdeFit(
        eta_hat=eta_hat,
        alpha=alpha,
        gradient_norm=norm,
        iterations=iterations,
        converged=True,
        model=model,
        n_obs=sample.n,
        sandwich=matrices,
    )


def _starting_point(model, sample, alpha, options) -> Eta:
    if options.start is not None:
        return options.start.validate(model, sample.k)
    if alpha == 0:
        return default_start(model, sample)
    try:
        return fit_mdpde(model, sample, 0.0, options).eta_hat
    except NonConvergence as e:
        logger.info(f"MLE start failed ({e}); starting from the default point")
        if isinstance(e, SeparationError):
            raise
        return default_start(model, sample)


def restart_points(model: GlmModel, sample: Sample, primary: Eta, options: FitOptions) -> List[Eta]:
    """
    Starts tried in order until one solve converges: the primary start, its
    midpoint with the default start, the default start, then
    options.restart_points. Repeated points are dropped.
    """
    fallback = default_start(model, sample)
    midpoint = Eta.from_vector(0.5 * (primary.to_vector() + fallback.to_vector()), model)
    extra = [eta.validate(model, sample.k) for eta in options.restart_points]
    points: List[Eta] = []
    for eta in [primary, midpoint, fallback, *extra]:
        if not any(np.allclose(eta.to_vector(), p.to_vector()) for p in points):
            points.append(eta)
    return points


def fit_path(
    model: GlmModel,
    sample: Sample,
    alphas: Sequence[float],
    options: Optional[FitOptions] = None,
) -> List[MdpdeFit]:
    """
    Fit an ascending alpha grid, starting each fit at the previous solution.
    Earlier converged fits on the path are kept as restart points.

    A fit that does not converge is kept in the list with converged=False.
    """
    options = options or FitOptions()
    alphas = [check_alpha(a) for a in alphas]
    if any(b < a for a, b in zip(alphas, alphas[1:])):
        raise PreconditionError(f"alphas must be sorted ascending (got {alphas})")
    fits = []
    start = options.start
    for alpha in alphas:
        earlier = tuple(f.eta_hat for f in reversed(fits) if f.converged)
        try:
            fit = fit_mdpde(
                model, sample, alpha, replace(options, start=start, restart_points=earlier + options.restart_points)
            )
            start = fit.eta_hat
        except NonConvergence as e:
            logger.warning(f"alpha={alpha}: {e}")
            fit = e.partial
            if fit is None:
                raise
        fits.append(fit)
    return fits
