"""
Shared fixtures and independent oracles: an IRLS Poisson MLE, brute-force
count sums for the gamma integrals, and plain numpy matrix algebra.
"""

import numpy as np
import pytest
from scipy import special

from dpdglm.asymp import UnivariateNormal
from dpdglm.model import NormalLinearRegression, PoissonRegression, Sample


def irls_poisson(X, y, iterations=100, tol=1e-13):
    """Poisson log-link MLE by iteratively reweighted least squares."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = np.zeros(X.shape[1])
    for _ in range(iterations):
        mu = np.exp(X @ beta)
        z = X @ beta + (y - mu) / mu
        W = mu
        new = np.linalg.solve(X.T @ (W[:, None] * X), X.T @ (W * z))
        if np.max(np.abs(new - beta)) < tol:
            return new
        beta = new
    return beta


def brute_force_count_gammas(linear_predictor, power, upper=500):
    """(mass, g1, g11) for Poisson f^power summed over y = 0..upper."""
    y = np.arange(upper + 1, dtype=float)
    mu = np.exp(linear_predictor)
    logf = y * linear_predictor - mu - special.gammaln(y + 1.0)
    fp = np.exp(power * logf)
    k1 = y - mu
    return fp.sum(), (k1 * fp).sum(), (k1 * k1 * fp).sum()


def sandwich_oracle(J, K):
    Jinv = np.linalg.inv(J)
    return Jinv @ K @ Jinv


def draw_poisson_sample(n, beta, mu_x=0.0, seed=0, intercept=False):
    rng = np.random.default_rng(seed)
    x = rng.normal(mu_x, 1.0, size=n)
    X = np.column_stack([np.ones(n), x]) if intercept else x[:, None]
    y = rng.poisson(np.exp(X @ np.asarray(beta, dtype=float))).astype(float)
    return Sample(X=X, y=y)


def draw_normal_sample(n, beta, phi, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(0.0, 1.0, size=n)])
    y = X @ np.asarray(beta, dtype=float) + rng.normal(0.0, phi, size=n)
    return Sample(X=X, y=y)


@pytest.fixture
def poisson():
    return PoissonRegression()


@pytest.fixture
def normal():
    return NormalLinearRegression()


@pytest.fixture
def std_normal_covariate():
    return UnivariateNormal(mu_x=0.0, sd=1.0)


@pytest.fixture
def poisson_sample():
    return draw_poisson_sample(200, [1.0], seed=11)


@pytest.fixture
def poisson_csv(tmp_path):
    """Five hand-built rows with a constant column."""
    path = tmp_path / "toy.csv"
    path.write_text("y,one,x\n0,1,-1.0\n1,1,-0.5\n1,1,0.0\n3,1,0.5\n4,1,1.0\n")
    return path
