"""
Robust aggregation across machines.

The central processor combines one statistic per machine with either the
coordinate median or the Distributed Composite Quantile (DCQ) estimator: the
median corrected by K normal-quantile indicator terms. The variance estimators
below supply the per-coordinate scale the DCQ correction needs; all of them
run on the central machine's own shard and need no extra transmission.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import norm

from .exceptions import ConfigError, DimensionMismatchError
from .models import BaseLossModel, Dataset, regularized_inverse

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DcqConfig:
    """Composite-quantile levels kappa_k = k/(K+1) and their normal quantiles."""

    K: int
    kappas: np.ndarray
    deltas: np.ndarray
    denom: float

    @classmethod
    def from_k(cls, K: int) -> "DcqConfig":
        K = int(K)
        if K < 1:
            raise ConfigError(f"DCQ needs K >= 1, got {K}")
        kappas = np.arange(1, K + 1) / (K + 1)
        deltas = norm.ppf(kappas)
        denom = float(np.sum(norm.pdf(deltas)))
        return cls(K=K, kappas=kappas, deltas=deltas, denom=denom)


@dataclass
class AggregateInput:
    """One coordinate's worth of machine statistics plus the DCQ centering and scale."""

    values: np.ndarray
    center: float
    sigma_hat: float
    scale: float = 1.0


@dataclass
class SandwichVariance:
    """Diagonal of the sandwich covariance plus the DP inflation n*s^2."""

    diag: np.ndarray
    noise_add: float

    @property
    def total(self) -> np.ndarray:
        return self.diag + self.noise_add

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.total)


def coord_median(vectors: np.ndarray) -> np.ndarray:
    """Coordinate-wise median of an M x p matrix (midpoint for even M)."""
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim == 1:
        vectors = vectors[:, None]
    if vectors.shape[0] == 0:
        raise DimensionMismatchError("Cannot aggregate zero machine statistics")
    return np.median(vectors, axis=0)


def dcq_vector(values: np.ndarray, sigma_hats: np.ndarray, scale: float, cfg: DcqConfig,
               centers: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Coordinate-wise DCQ of an M x p matrix of machine statistics.

    ``centers`` defaults to the coordinate median. A zero ``sigma_hat`` leaves
    its coordinate at the center.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    M, p = values.shape
    if M == 0:
        raise DimensionMismatchError("Cannot aggregate zero machine statistics")

    sigma_hats = np.asarray(sigma_hats, dtype=float)
    if sigma_hats.ndim == 0:
        sigma_hats = np.full(p, float(sigma_hats))
    if sigma_hats.shape != (p,):
        raise DimensionMismatchError(f"sigma_hats must have length {p}")
    if np.any(sigma_hats < 0):
        raise ValueError("sigma_hat must be nonnegative")
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")

    center = coord_median(values) if centers is None else np.asarray(centers, dtype=float)
    if center.shape != (p,):
        raise DimensionMismatchError(f"centers must have length {p}")

    below = np.zeros(p)
    for delta in cfg.deltas:
        threshold = center + sigma_hats * delta / scale
        below += np.count_nonzero(values <= threshold, axis=0)

    correction = sigma_hats * (below - M * cfg.kappas.sum()) / (M * scale * cfg.denom)
    return center - correction


def dcq_scalar(agg: AggregateInput, cfg: DcqConfig) -> float:
    """DCQ of a single coordinate around a given center."""
    values = np.asarray(agg.values, dtype=float).reshape(-1, 1)
    return float(dcq_vector(values, np.array([agg.sigma_hat]), agg.scale, cfg,
                            centers=np.array([agg.center]))[0])


def dk_constant(cfg: DcqConfig) -> float:
    """
    Asymptotic variance inflation D_K of the DCQ relative to the mean.

    Uses the covariance form sum(min(k1, k2) - k1 k2) / (sum psi(Delta_k))^2,
    which gives pi/2 at K = 1 and tends to pi/3.
    """
    k = cfg.kappas
    cov = np.minimum.outer(k, k) - np.outer(k, k)
    return float(cov.sum() / cfg.denom ** 2)


def sandwich_variance(model: BaseLossModel, central_data: Dataset, theta: np.ndarray,
                      n: int, s: float) -> SandwichVariance:
    """
    Diagonal of H^{-1} S H^{-1} on the central shard plus n*s^2.

    ``S`` is the empirical covariance of per-sample gradients at ``theta``.
    """
    H_inv = regularized_inverse(model.hessian(central_data, theta))
    rows = model.per_sample_gradient_rows(central_data, theta)
    rows = rows - rows.mean(axis=0)
    diag = np.mean((rows @ H_inv) ** 2, axis=0)
    return SandwichVariance(diag=np.maximum(diag, 0.0), noise_add=float(n * s ** 2))


def gradient_entry_variance(model: BaseLossModel, central_data: Dataset, theta: np.ndarray,
                            n: int, s2: float) -> np.ndarray:
    """Per-coordinate variance of per-sample gradient entries plus n*s2^2."""
    rows = model.per_sample_gradient_rows(central_data, theta)
    return np.maximum(rows.var(axis=0), 0.0) + n * s2 ** 2


def gradient_difference_variance(model: BaseLossModel, central_data: Dataset,
                                 theta_new: np.ndarray, theta_old: np.ndarray,
                                 n: int, s4: float) -> np.ndarray:
    """Per-coordinate variance of per-sample gradient differences plus n*s4^2."""
    diff = (model.per_sample_gradient_rows(central_data, theta_new)
            - model.per_sample_gradient_rows(central_data, theta_old))
    return np.maximum(diff.var(axis=0), 0.0) + n * s4 ** 2


def _bilinear_variance(model: BaseLossModel, central_data: Dataset, theta: np.ndarray,
                       left: np.ndarray, right: np.ndarray) -> np.ndarray:
    products = model.per_sample_hessian_products(central_data, theta, left, right)
    second = np.mean(products ** 2, axis=0)
    first = np.mean(products, axis=0)
    # clamp before the noise term is added
    return np.maximum(second - first ** 2, 0.0)


def h1_entry_variance(model: BaseLossModel, central_data: Dataset, theta: np.ndarray,
                      g_hat: np.ndarray, n: int, s30: float) -> np.ndarray:
    """
    Variance of the Newton-direction entries h^(1) = H^{-1} g_hat.

    Sample variance over the central shard of the scalars
    ``(H0^{-1})_l . H_i . H0^{-1} g_hat`` plus n*s30^2.
    """
    H_inv = regularized_inverse(model.hessian(central_data, theta))
    sample = _bilinear_variance(model, central_data, theta, H_inv, H_inv @ g_hat)
    return sample + n * s30 ** 2


def h3_entry_variance(model: BaseLossModel, central_data: Dataset, theta_cq: np.ndarray,
                      V1: np.ndarray, g_os_hat: np.ndarray, n: int, s50: float) -> np.ndarray:
    """Same as :func:`h1_entry_variance` with rows transformed by V1^T and right side H0^{-1} V1 g."""
    H_inv = regularized_inverse(model.hessian(central_data, theta_cq))
    sample = _bilinear_variance(model, central_data, theta_cq, V1.T @ H_inv,
                                H_inv @ (V1 @ g_os_hat))
    return sample + n * s50 ** 2
