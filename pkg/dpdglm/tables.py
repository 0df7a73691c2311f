"""
Reproduction tables: asymptotic relative efficiency of the MDPDE and
asymptotic contiguous power of the Wald-type test, Poisson regression with a
scalar N(mu_x, 1) covariate.
"""

import logging
from typing import Iterable, Optional, Sequence, Tuple

import pandas as pd

from dpdglm.asymp import CovariateDistribution, Empirical, UnivariateNormal, are
from dpdglm.config import DEFAULT_LEVEL, TABLE_ALPHAS
from dpdglm.model import Eta, PoissonRegression
from dpdglm.simharness import replicate_rng
from dpdglm.wald import LinearHypothesis, contiguous_power

logger = logging.getLogger(__name__)

# (mu_x, beta0)
ARE_ROWS: Tuple[Tuple[float, float], ...] = (
    (0.0, 1.0), (0.0, 0.5), (1.0, 1.0), (1.0, 0.5), (5.0, 1.0), (5.0, 0.5),
)
# (d, mu_x, beta0)
POWER_ROWS: Tuple[Tuple[float, float, float], ...] = (
    (1.0, 0.0, 1.0), (1.0, 0.0, 0.5), (1.0, 1.0, 1.0), (1.0, 1.0, 0.5),
    (1.0, 5.0, 1.0), (1.0, 5.0, 0.5),
    (2.0, 0.0, 1.0), (2.0, 0.0, 0.5), (2.0, 1.0, 1.0), (2.0, 1.0, 0.5),
)
TABLE_KINDS = {"are": "are", "power": "power", "ARE": "are", "ContiguousPower": "power"}


def alpha_label(alpha: float) -> str:
    return f"{alpha:g}"


def covariates(mu_x: float, mc_draws: Optional[int] = None, seed: int = 0, stream: int = 0) -> CovariateDistribution:
    """N(mu_x, 1) by quadrature, or an empirical sample of mc_draws points from it."""
    exact = UnivariateNormal(mu_x=mu_x, sd=1.0)
    if not mc_draws:
        return exact
    return Empirical(X=exact.draw(replicate_rng(seed, stream), int(mc_draws)))


def are_table(
    alphas: Sequence[float] = TABLE_ALPHAS,
    rows: Iterable[Tuple[float, float]] = ARE_ROWS,
    mc_draws: Optional[int] = None,
    seed: int = 0,
) -> pd.DataFrame:
    """One row per (mu_x, beta0), one column per alpha, values rounded to 3 decimals."""
    model = PoissonRegression()
    records = []
    for i, (mu_x, beta0) in enumerate(rows):
        dist = covariates(mu_x, mc_draws, seed, i)
        record = {"mu_x": mu_x, "beta0": beta0}
        for alpha in alphas:
            record[alpha_label(alpha)] = round(are(model, dist, [beta0], alpha), 3)
        logger.info(f"ARE row mu_x={mu_x:g}, beta0={beta0:g} done")
        records.append(record)
    return pd.DataFrame.from_records(records)


def power_table(
    alphas: Sequence[float] = TABLE_ALPHAS,
    rows: Iterable[Tuple[float, float, float]] = POWER_ROWS,
    level: float = DEFAULT_LEVEL,
    mc_draws: Optional[int] = None,
    seed: int = 0,
) -> pd.DataFrame:
    """Contiguous power for H0: beta = beta0 under beta_n = beta0 + d / sqrt(n)."""
    model = PoissonRegression()
    records = []
    for i, (d, mu_x, beta0) in enumerate(rows):
        dist = covariates(mu_x, mc_draws, seed, i)
        hypothesis = LinearHypothesis(L=[[1.0]], l0=[beta0])
        record = {"d": d, "mu_x": mu_x, "beta0": beta0}
        for alpha in alphas:
            value = contiguous_power(model, dist, Eta(beta=[beta0]), hypothesis, [d], level, alpha)
            record[alpha_label(alpha)] = round(value, 3)
        logger.info(f"Power row d={d:g}, mu_x={mu_x:g}, beta0={beta0:g} done")
        records.append(record)
    return pd.DataFrame.from_records(records)


def build_table(which: str, **kwargs) -> pd.DataFrame:
    kind = TABLE_KINDS[which]
    if kind == "are":
        kwargs.pop("level", None)
        return are_table(**kwargs)
    return power_table(**kwargs)
