"""
Monte Carlo studies: draw contaminated samples from the GLM, fit the MDPDE over
an alpha grid and tabulate estimates and Wald-test rejection rates.

Every replicate draws from its own Philox stream keyed by (seed, replicate
index), so a study gives the same report at any level of parallelism.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import toml
from joblib import Parallel, delayed

from dpdglm.asymp import CovariateDistribution, ProductNormal, UnivariateNormal
from dpdglm.config import DEFAULT_LEVEL, MAX_FAILURE_SHARE, default_n_jobs
from dpdglm.dpd import check_alpha
from dpdglm.errors import (
    DpdGlmError,
    InputError,
    PreconditionError,
    SimulationFailure,
    Singular,
)
from dpdglm.estim import fit_path
from dpdglm.model import Eta, GlmModel, Sample, make_model
from dpdglm.numerics import stable_mean
from dpdglm.robust import ContaminationPoint
from dpdglm.wald import LinearHypothesis, wald_statistic

logger = logging.getLogger(__name__)

CONTAMINATION_MODES = ("fixed", "contiguous")


@dataclass(frozen=True, eq=False)
class SimConfig:
    model: GlmModel
    covariate_dist: CovariateDistribution
    eta_true: Eta
    n: int
    replicates: int
    alpha_list: Tuple[float, ...]
    epsilon: float = 0.0
    contamination_point: Optional[ContaminationPoint] = None
    hypothesis: Optional[LinearHypothesis] = None
    level: float = DEFAULT_LEVEL
    seed: int = 0
    contamination_mode: str = "fixed"
    contiguous_d: Optional[np.ndarray] = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.n < 1 or self.replicates < 1:
            raise PreconditionError(f"n and replicates must be >= 1 (got {self.n}, {self.replicates})")
        if not 0.0 <= self.epsilon < 1.0:
            raise PreconditionError(f"epsilon must lie in [0, 1) (got {self.epsilon})")
        if self.epsilon > 0 and self.contamination_point is None:
            raise PreconditionError("epsilon > 0 needs a contamination point")
        if self.contamination_mode not in CONTAMINATION_MODES:
            raise PreconditionError(
                f"contamination_mode must be one of {CONTAMINATION_MODES} (got {self.contamination_mode!r})"
            )
        if not 0.0 < self.level < 1.0:
            raise PreconditionError(f"level must lie in (0, 1) (got {self.level})")
        if not 0 <= int(self.seed) < 2**64:
            raise PreconditionError(f"seed must be a 64-bit unsigned integer (got {self.seed})")
        alphas = tuple(sorted(check_alpha(a) for a in self.alpha_list))
        if not alphas:
            raise PreconditionError("alpha_list is empty")
        object.__setattr__(self, "alpha_list", alphas)
        self.eta_true.validate(self.model, self.covariate_dist.dim)
        if self.contamination_point is not None:
            self.contamination_point.check(self.model)
            if len(self.contamination_point.x_t) != self.covariate_dist.dim:
                raise PreconditionError("contamination x has the wrong length")
        if self.contiguous_d is not None:
            d = np.atleast_1d(np.asarray(self.contiguous_d, dtype=float))
            if len(d) != len(self.eta_true.to_vector()):
                raise PreconditionError(f"contiguous_d must have {len(self.eta_true.to_vector())} entries")
            object.__setattr__(self, "contiguous_d", d)

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "SimConfig":
        """Build a config from parsed TOML keys."""
        known = {
            "family", "phi", "beta", "covariate_mean", "covariate_sd", "intercept", "n",
            "replicates", "alphas", "epsilon", "contamination_mode", "contamination_y",
            "contamination_x", "L", "l0", "level", "seed", "contiguous_d", "n_jobs",
        }
        unknown = sorted(set(raw) - known)
        if unknown:
            raise InputError(f"unknown simulation config keys: {', '.join(unknown)}")
        try:
            family = raw.get("family", "poisson")
            phi = raw.get("phi")
            model = make_model(family)
            beta = np.atleast_1d(np.asarray(raw["beta"], dtype=float))
            mean = raw.get("covariate_mean", 0.0)
            sd = raw.get("covariate_sd", 1.0)
            intercept = bool(raw.get("intercept", False))
            if np.ndim(mean) == 0 and np.ndim(sd) == 0:
                covariates = UnivariateNormal(mu_x=float(mean), sd=float(sd), intercept=intercept)
            else:
                covariates = ProductNormal(mu=tuple(np.atleast_1d(mean)), sd=tuple(np.atleast_1d(sd)), intercept=intercept)
            eta = Eta(beta=beta, phi=None if model.dispersion_known else phi)
            point = None
            if "contamination_y" in raw or "contamination_x" in raw:
                point = ContaminationPoint(y_t=raw["contamination_y"], x_t=raw["contamination_x"])
            hypothesis = None
            if "L" in raw:
                hypothesis = LinearHypothesis(L=raw["L"], l0=raw.get("l0", 0.0))
            n_jobs = int(raw["n_jobs"]) if "n_jobs" in raw else default_n_jobs()
            return cls(
                model=model,
                covariate_dist=covariates,
                eta_true=eta,
                n=int(raw["n"]),
                replicates=int(raw["replicates"]),
                alpha_list=tuple(raw.get("alphas", [0.0])),
                epsilon=float(raw.get("epsilon", 0.0)),
                contamination_point=point,
                hypothesis=hypothesis,
                level=float(raw.get("level", DEFAULT_LEVEL)),
                seed=int(raw.get("seed", 0)),
                contamination_mode=raw.get("contamination_mode", "fixed"),
                contiguous_d=raw.get("contiguous_d"),
                n_jobs=n_jobs,
            )
        except KeyError as e:
            raise InputError(f"missing simulation config key {e.args[0]!r}")
        except (DpdGlmError, ValueError, TypeError) as e:
            if isinstance(e, InputError):
                raise
            raise InputError(f"invalid simulation config: {e}")

    @classmethod
    def from_toml(cls, path: Union[str, Path]) -> "SimConfig":
        try:
            raw = toml.load(str(path))
        except FileNotFoundError:
            raise InputError(f"config file not found: {path}")
        except toml.TomlDecodeError as e:
            raise InputError(f"cannot parse {path}: {e.msg} (column {e.colno})", line=e.lineno)
        return cls.from_dict(raw)

    def to_dict(self) -> Dict[str, Any]:
        dist = self.covariate_dist
        out: Dict[str, Any] = {"family": self.model.family.value}
        if self.eta_true.phi is not None:
            out["phi"] = self.eta_true.phi
        out["beta"] = self.eta_true.beta.tolist()
        if isinstance(dist, UnivariateNormal):
            out["covariate_mean"], out["covariate_sd"] = dist.mu_x, dist.sd
        elif isinstance(dist, ProductNormal):
            out["covariate_mean"], out["covariate_sd"] = list(dist.mu), list(dist.sd)
        else:
            raise PreconditionError(f"{type(dist).__name__} covariates cannot be written to TOML")
        out.update(
            intercept=dist.intercept,
            n=self.n,
            replicates=self.replicates,
            alphas=list(self.alpha_list),
            epsilon=self.epsilon,
            contamination_mode=self.contamination_mode,
            level=self.level,
            seed=int(self.seed),
            n_jobs=self.n_jobs,
        )
        if self.contamination_point is not None:
            out["contamination_y"] = self.contamination_point.y_t
            out["contamination_x"] = self.contamination_point.x_t.tolist()
        if self.hypothesis is not None:
            out["L"] = self.hypothesis.L.tolist()
            out["l0"] = self.hypothesis.l0.tolist()
        if self.contiguous_d is not None:
            out["contiguous_d"] = self.contiguous_d.tolist()
        return out

    def to_toml(self) -> str:
        return toml.dumps(self.to_dict())


def replicate_rng(seed: int, replicate_index: int) -> np.random.Generator:
    """Independent Philox stream for one replicate."""
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(replicate_index),))
    return np.random.Generator(np.random.Philox(sequence))


def generate_sample(config: SimConfig, replicate_index: int) -> Sample:
    """
    n draws of (x, y): x from G and y | x from the model, each replaced by the
    contamination point with probability epsilon (fixed mode) or
    epsilon / sqrt(n) (contiguous mode).
    """
    rng = replicate_rng(config.seed, replicate_index)
    n = config.n
    X = config.covariate_dist.draw(rng, n).astype(float)
    vec = config.eta_true.to_vector()
    if config.contiguous_d is not None:
        vec = vec + config.contiguous_d / np.sqrt(n)
    eta = Eta.from_vector(vec, config.model)
    y = np.asarray(config.model.sample(rng, X @ eta.beta, eta.phi), dtype=float)
    if config.epsilon > 0:
        share = config.epsilon if config.contamination_mode == "fixed" else config.epsilon / np.sqrt(n)
        hit = rng.random(n) < share
        X[hit] = config.contamination_point.x_t
        y[hit] = config.contamination_point.y_t
    return Sample(X=X, y=y)


@dataclass(frozen=True)
class AlphaSummary:
    alpha: float
    n_ok: int
    failures: int
    eta_mean: np.ndarray
    eta_sd: np.ndarray
    rejection_rate: float = float("nan")
    rejection_se: float = float("nan")


@dataclass(frozen=True)
class SimReport:
    rows: List[AlphaSummary]
    dispersion_known: bool = True
    replicates: int = 0

    def row(self, alpha: float) -> AlphaSummary:
        for summary in self.rows:
            if np.isclose(summary.alpha, alpha):
                return summary
        raise KeyError(alpha)

    def to_frame(self) -> pd.DataFrame:
        records = []
        for summary in self.rows:
            record = {"alpha": summary.alpha, "n_ok": summary.n_ok, "failures": summary.failures}
            k = len(summary.eta_mean) - (0 if self.dispersion_known else 1)
            for j in range(k):
                record[f"beta_mean_{j}"] = summary.eta_mean[j]
                record[f"beta_sd_{j}"] = summary.eta_sd[j]
            if not self.dispersion_known:
                record["phi_mean"] = summary.eta_mean[-1]
                record["phi_sd"] = summary.eta_sd[-1]
            record["rejection_rate"] = summary.rejection_rate
            record["rejection_se"] = summary.rejection_se
            records.append(record)
        return pd.DataFrame.from_records(records)


def _run_replicate(config: SimConfig, index: int) -> List[Tuple[bool, np.ndarray, bool]]:
    """(fit ok, eta_hat vector, rejected) for each alpha of one replicate."""
    n_params = len(config.eta_true.to_vector())
    failed = (False, np.full(n_params, np.nan), False)
    sample = generate_sample(config, index)
    try:
        fits = fit_path(config.model, sample, config.alpha_list)
    except DpdGlmError as e:
        logger.warning(f"Replicate {index}: {e}")
        return [failed] * len(config.alpha_list)
    results = []
    for fit in fits:
        if not fit.converged:
            results.append(failed)
            continue
        rejected = False
        if config.hypothesis is not None:
            try:
                outcome = wald_statistic(fit, config.hypothesis, levels=(config.level,))
            except Singular as e:
                logger.warning(f"Replicate {index}, alpha={fit.alpha}: {e}")
                results.append(failed)
                continue
            rejected = outcome.reject_at[config.level]
        results.append((True, fit.eta_hat.to_vector(), rejected))
    return results


def _run_study(config: SimConfig, with_test: bool) -> SimReport:
    indices = range(config.replicates)
    if config.n_jobs == 1:
        outcomes = [_run_replicate(config, i) for i in indices]
    else:
        outcomes = Parallel(n_jobs=config.n_jobs, prefer="threads")(
            delayed(_run_replicate)(config, i) for i in indices
        )
    rows = []
    for a, alpha in enumerate(config.alpha_list):
        ok = np.array([o[a][0] for o in outcomes], dtype=bool)
        etas = np.array([o[a][1] for o in outcomes])[ok]
        rejected = np.array([o[a][2] for o in outcomes], dtype=float)[ok]
        n_ok = int(ok.sum())
        failures = config.replicates - n_ok
        if failures > max(1.0, MAX_FAILURE_SHARE * config.replicates):
            raise SimulationFailure(
                f"alpha={alpha}: {failures} of {config.replicates} replicates failed to fit"
            )
        if failures:
            logger.warning(f"alpha={alpha}: {failures} replicates excluded")
        n_params = len(config.eta_true.to_vector())
        eta_mean = stable_mean(etas, axis=0) if n_ok else np.full(n_params, np.nan)
        eta_sd = etas.std(axis=0, ddof=1) if n_ok > 1 else np.full(n_params, np.nan)
        summary = dict(alpha=alpha, n_ok=n_ok, failures=failures, eta_mean=eta_mean, eta_sd=eta_sd)
        if with_test and n_ok:
            rate = float(stable_mean(rejected))
            summary.update(rejection_rate=rate, rejection_se=float(np.sqrt(rate * (1.0 - rate) / n_ok)))
        rows.append(AlphaSummary(**summary))
        logger.info(f"alpha={alpha}: {n_ok} fits" + (f", rejection rate {rows[-1].rejection_rate:.4f}" if with_test else ""))
    return SimReport(rows=rows, dispersion_known=config.model.dispersion_known, replicates=config.replicates)


def run_level_power_study(config: SimConfig) -> SimReport:
    """Empirical rejection rates of the Wald-type test for every alpha."""
    if config.hypothesis is None:
        raise PreconditionError("a level/power study needs a hypothesis (L, l0)")
    return _run_study(config, with_test=True)


def run_estimation_study(config: SimConfig) -> SimReport:
    """Mean and spread of the MDPDE for every alpha, without testing."""
    return _run_study(config, with_test=False)
