"""Robust minimum density power divergence estimation and Wald-type tests for GLMs with random covariates."""

from dpdglm.asymp import Empirical, ProductNormal, UnivariateNormal, are, sandwich_analytic, sandwich_empirical
from dpdglm.dpd import dpd_objective, gamma_set, psi_alpha
from dpdglm.errors import (
    ConfigError,
    DomainError,
    DpdGlmError,
    InputError,
    NonConvergence,
    NotPositiveDefinite,
    PreconditionError,
    RankDeficient,
    SeparationError,
    SimulationFailure,
    Singular,
)
from dpdglm.estim import MdpdeFit, fit_mdpde, fit_path
from dpdglm.model import Eta, NormalLinearRegression, Observation, PoissonRegression, Sample, make_model
from dpdglm.robust import ContaminationPoint, GridSpec, if2_test, if_estimator, if_grid_scan, lif_test, pif_test
from dpdglm.simharness import SimConfig, run_estimation_study, run_level_power_study
from dpdglm.wald import (
    LinearHypothesis,
    contiguous_power,
    power_fixed_alternative,
    required_sample_size,
    wald_statistic,
)

__version__ = "0.1.0"
