"""
Numerical constants and option objects shared across dpdglm.
"""

import logging
import os
from dataclasses import dataclass
from typing import Optional, Tuple

from dpdglm.errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

# Estimating-equation solver
FIT_TOL = 1e-8
STEP_TOL = 1e-10
MAX_ITER = 200
MAX_HALVINGS = 30
MAX_LINEAR_PREDICTOR = 700.0  # exp() overflows just past this
MAX_BETA_NORM = 1e6

# Count-support truncation: y in [mu - 12 sd, max(50, mu + 12 sd)]
COUNT_MIN_UPPER = 50
COUNT_TAIL_SDS = 12.0
COUNT_TAIL_RATIO = 1e-14
COUNT_WIDEN_STEPS = 4
COUNT_CHUNK_CELLS = 4_000_000  # cells per (rows x support) block
COUNT_MAX_WIDTH = 2_000_000

# Quadrature
RESPONSE_QUAD_NODES = 201
COVARIATE_QUAD_NODES = 61
MAX_TENSOR_DIM = 3
COVARIATE_MC_DRAWS = 200_000
COVARIATE_MC_SEED = 20170512

# Linear algebra and special functions
MAX_CONDITION = 1e12
SERIES_TOL = 1e-12
SERIES_MAX_TERMS = 5000
FD_REL_STEP = 1e-5
PHI_FLOOR = 1e-12

# Testing
DEFAULT_LEVEL = 0.05
REPORT_LEVELS: Tuple[float, ...] = (0.01, 0.05, 0.10)
MAX_FAILURE_SHARE = 0.01

# Table grids
TABLE_ALPHAS: Tuple[float, ...] = (0.0, 0.05, 0.1, 0.25, 0.4, 0.5, 0.7, 1.0)


@dataclass(frozen=True)
class FitOptions:
    """Controls for fit_mdpde."""

    tol: float = FIT_TOL
    step_tol: float = STEP_TOL
    max_iter: int = MAX_ITER
    start: Optional[object] = None  # Eta; typed loosely to avoid an import cycle
    fallback: bool = True
    restart_points: Tuple[object, ...] = ()  # extra Eta starts tried after a failed solve

    def __post_init__(self):
        if self.tol <= 0 or self.step_tol <= 0:
            raise DomainError(f"tolerances must be positive (got tol={self.tol}, step_tol={self.step_tol})")
        if self.max_iter < 1:
            raise DomainError(f"max_iter must be >= 1 (got {self.max_iter})")


def default_n_jobs() -> int:
    """Return DPDGLM_N_JOBS from the environment, defaulting to 1."""
    raw = os.getenv("DPDGLM_N_JOBS")
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"DPDGLM_N_JOBS must be an integer (got {raw!r})")
    if value == 0:
        raise ConfigError(f"DPDGLM_N_JOBS must be non-zero, use -1 for all cores (got {raw!r})")
    return value


def default_log_level() -> int:
    """Return the logging level named by DPDGLM_LOG_LEVEL, defaulting to INFO."""
    name = os.getenv("DPDGLM_LOG_LEVEL", "INFO").upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        logger.warning(f"Unknown DPDGLM_LOG_LEVEL {name!r}, using INFO")
        return logging.INFO
    return level
