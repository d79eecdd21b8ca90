"""
Synthetic data generators.

Covariates are Gaussian with Toeplitz covariance 0.6^|i-j| and the true
parameter is theta* = p^{-1/2} (1/2, ..., 1/2), so |theta*| = 1/2 for every p.
"""

import logging
from functools import lru_cache
from typing import Callable, Dict, Tuple

import numpy as np
from scipy.linalg import cholesky, eigvalsh, toeplitz
from scipy.special import expit

from ..exceptions import ConfigError, ProtocolError
from ..models import Dataset, ModelKind, get_model

logger = logging.getLogger(__name__)

TOEPLITZ_RHO = 0.6
MAX_REJECTION_ROUNDS = 1000
POPULATION_DRAWS = 50_000
POPULATION_SEED = 20240101


def true_theta(p: int) -> np.ndarray:
    return np.full(p, 0.5 / np.sqrt(p))


def toeplitz_cov(p: int, rho: float = TOEPLITZ_RHO) -> np.ndarray:
    return toeplitz(rho ** np.arange(p))


def _check(p: int, N: int) -> None:
    if p < 1 or N < 1:
        raise ConfigError(f"need p >= 1 and N >= 1, got p={p}, N={N}")


def _gaussian_rows(rng: np.random.Generator, count: int, chol: np.ndarray) -> np.ndarray:
    return rng.standard_normal((count, chol.shape[0])) @ chol


def gen_logistic(p: int, N: int, seed: int) -> Tuple[Dataset, np.ndarray]:
    """X ~ N(0, Sigma_T), y ~ Bernoulli(sigmoid(x'theta*))."""
    _check(p, N)
    rng = np.random.default_rng(seed)
    theta = true_theta(p)
    X = _gaussian_rows(rng, N, cholesky(toeplitz_cov(p)))
    y = (rng.random(N) < expit(X @ theta)).astype(float)
    return Dataset(X, y), theta


def _truncated_rows(rng: np.random.Generator, N: int, theta: np.ndarray,
                    chol: np.ndarray) -> Tuple[np.ndarray, int]:
    """Rows with |x'theta| <= 1 by batched rejection; returns rows and proposals used."""
    accepted = []
    have = 0
    proposals = 0
    for _ in range(MAX_REJECTION_ROUNDS):
        batch = max(64, int(1.2 * (N - have)))
        X = _gaussian_rows(rng, batch, chol)
        proposals += batch
        keep = X[np.abs(X @ theta) <= 1.0]
        accepted.append(keep)
        have += keep.shape[0]
        if have >= N:
            return np.vstack(accepted)[:N], proposals
    raise ProtocolError(
        f"rejection sampler produced {have} of {N} rows in {MAX_REJECTION_ROUNDS} rounds"
    )


def gen_poisson(p: int, N: int, seed: int) -> Tuple[Dataset, np.ndarray]:
    """Truncated Toeplitz-normal covariates with |x'theta*| <= 1, y ~ Poisson(exp(x'theta*))."""
    _check(p, N)
    rng = np.random.default_rng(seed)
    theta = true_theta(p)
    X, proposals = _truncated_rows(rng, N, theta, cholesky(toeplitz_cov(p)))
    logger.debug(f"Poisson covariates: {N} rows from {proposals} proposals")
    y = rng.poisson(np.exp(X @ theta)).astype(float)
    return Dataset(X, y), theta


def poisson_acceptance_rate(p: int, proposals: int, seed: int) -> float:
    """Fraction of Toeplitz-normal proposals with |x'theta*| <= 1."""
    rng = np.random.default_rng(seed)
    theta = true_theta(p)
    X = _gaussian_rows(rng, proposals, cholesky(toeplitz_cov(p)))
    return float(np.mean(np.abs(X @ theta) <= 1.0))


def gen_quadratic(p: int, N: int, seed: int) -> Tuple[Dataset, np.ndarray]:
    """X ~ N(theta*, I) for the location model."""
    _check(p, N)
    rng = np.random.default_rng(seed)
    theta = true_theta(p)
    return Dataset(theta + rng.standard_normal((N, p))), theta


GENERATORS: Dict[ModelKind, Callable[[int, int, int], Tuple[Dataset, np.ndarray]]] = {
    ModelKind.LOGISTIC: gen_logistic,
    ModelKind.POISSON: gen_poisson,
    ModelKind.QUADRATIC: gen_quadratic,
}


def generate(kind, p: int, N: int, seed: int) -> Tuple[Dataset, np.ndarray]:
    """Dispatch to the generator of ``kind``."""
    return GENERATORS[ModelKind(kind)](p, N, seed)


@lru_cache(maxsize=32)
def population_lambda_min(kind, p: int, draws: int = POPULATION_DRAWS,
                          seed: int = POPULATION_SEED) -> float:
    """
    Smallest eigenvalue of the population Hessian E[d^2 f(X, theta*)].

    Estimated from ``draws`` rows of the model's own generator. This is the
    Hessian eigenvalue lower bound that scales the local-estimator noise.
    """
    kind = ModelKind(kind)
    data, theta = generate(kind, p, draws, seed)
    hessian = get_model(kind, p).hessian(data, theta)
    value = float(eigvalsh(hessian)[0])
    logger.debug(f"Population Hessian of {kind.value} (p={p}): smallest eigenvalue {value:.4f}")
    return value
