"""
Base classes for M-estimation loss models and the local Newton solver.

Every loss model averages a per-sample loss ``f(x, theta)`` over a machine's
shard. Models provide per-sample gradient rows and Hessian-vector products so
that the variance estimators in :mod:`robust_qn.aggregation` never have to
materialize ``n`` Hessians.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..exceptions import ConfigError, DimensionMismatchError, NumericOverflowError

logger = logging.getLogger(__name__)

COND_LIMIT = 1e12
RIDGE_FACTOR = 1e-8
MAX_HALVINGS = 30
# iteration stops once trace(H) drops below this share of its starting value
CURVATURE_COLLAPSE = 1e-3
MAX_PARAM_NORM = 1e4


class ModelKind(str, Enum):
    LOGISTIC = "logistic"
    POISSON = "poisson"
    QUADRATIC = "quadratic"


@dataclass(frozen=True)
class ModelSpec:
    """Model family and parameter dimension."""

    kind: ModelKind
    p: int

    def __post_init__(self):
        object.__setattr__(self, 'kind', ModelKind(self.kind))
        if int(self.p) < 1:
            raise ConfigError(f"Parameter dimension must be >= 1, got {self.p}")


@dataclass
class Dataset:
    """Covariates (n x q) and, for regression models, a length-n response vector."""

    covariates: np.ndarray
    responses: Optional[np.ndarray] = None

    def __post_init__(self):
        self.covariates = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        if self.responses is not None:
            self.responses = np.asarray(self.responses, dtype=float).reshape(-1)
            if self.responses.shape[0] != self.covariates.shape[0]:
                raise DimensionMismatchError(
                    f"{self.covariates.shape[0]} covariate rows but "
                    f"{self.responses.shape[0]} responses"
                )

    @property
    def n(self) -> int:
        return int(self.covariates.shape[0])

    def __len__(self) -> int:
        return self.n

    def take(self, index: np.ndarray) -> "Dataset":
        """Rows selected by ``index`` as a new dataset."""
        responses = None if self.responses is None else self.responses[index]
        return Dataset(self.covariates[index], responses)


@dataclass(frozen=True)
class SolverOpts:
    tol: float = 1e-8
    max_iter: int = 100
    damping: float = 0.5
    max_norm: float = MAX_PARAM_NORM

    def __post_init__(self):
        if self.tol <= 0:
            raise ConfigError(f"Solver tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError(f"Solver max_iter must be >= 1, got {self.max_iter}")
        if not 0 < self.damping <= 1:
            raise ConfigError(f"Solver damping must lie in (0, 1], got {self.damping}")
        if self.max_norm <= 0:
            raise ConfigError(f"Solver max_norm must be positive, got {self.max_norm}")


@dataclass
class SolverResult:
    """Outcome of :func:`local_m_estimate`."""

    theta: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float
    diverged: bool = False


class BaseLossModel(ABC):
    """Base class for all loss models."""

    def __init__(self, p: int):
        self.spec = ModelSpec(self.kind, p)

    @property
    def p(self) -> int:
        return self.spec.p

    @property
    @abstractmethod
    def kind(self) -> ModelKind:
        """Model family"""
        pass

    @abstractmethod
    def sample_losses(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        """Per-sample losses f(X_i, theta), length n"""
        pass

    @abstractmethod
    def per_sample_gradient_rows(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        """Per-sample gradients, n x p; row i is the gradient of f(X_i, theta)"""
        pass

    @abstractmethod
    def hessian(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        """Average Hessian (1/n) sum of per-sample Hessians, p x p and symmetric"""
        pass

    @abstractmethod
    def per_sample_hessian_products(self, data: Dataset, theta: np.ndarray,
                                    left: np.ndarray, right: np.ndarray) -> np.ndarray:
        """
        Bilinear forms of the per-sample Hessians.

        Entry ``[i, l]`` equals ``left[l] @ H_i @ right`` where ``H_i`` is the
        Hessian of ``f(X_i, theta)``; ``left`` is q x p, ``right`` has length p.
        """
        pass

    def check_data(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        """Validate shapes and return ``theta`` as a float vector."""
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape[0] != self.p:
            raise DimensionMismatchError(f"theta has length {theta.shape[0]}, model expects {self.p}")
        if data.covariates.shape[1] != self.p:
            raise DimensionMismatchError(
                f"covariates have {data.covariates.shape[1]} columns, model expects {self.p}"
            )
        if data.n == 0:
            raise DimensionMismatchError("dataset is empty")
        return theta

    def loss_value(self, data: Dataset, theta: np.ndarray) -> float:
        """Average loss F(theta) = (1/n) sum f(X_i, theta)."""
        theta = self.check_data(data, theta)
        value = float(np.mean(self.sample_losses(data, theta)))
        return _finite(value, "loss")

    def gradient(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        """Average gradient over the shard."""
        theta = self.check_data(data, theta)
        return _finite(self.per_sample_gradient_rows(data, theta).mean(axis=0), "gradient")

    def __repr__(self) -> str:
        return f"{type(self).__name__}(p={self.p})"


class GlmLossModel(BaseLossModel):
    """
    Canonical-link GLM losses ``f = b(x'theta) - y x'theta``.

    Subclasses supply the cumulant ``b``, its derivative (the mean) and its
    second derivative (the Hessian weight).
    """

    @abstractmethod
    def cumulant(self, u: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def mean(self, u: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def weight(self, u: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def check_responses(self, responses: np.ndarray) -> None:
        pass

    def check_data(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        theta = super().check_data(data, theta)
        if data.responses is None:
            raise DimensionMismatchError(f"{self.kind.value} model needs responses")
        self.check_responses(data.responses)
        return theta

    def _linear(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        return data.covariates @ theta

    def sample_losses(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        u = self._linear(data, theta)
        with np.errstate(over='ignore'):
            return self.cumulant(u) - data.responses * u

    def per_sample_gradient_rows(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        theta = self.check_data(data, theta)
        u = self._linear(data, theta)
        with np.errstate(over='ignore', invalid='ignore'):
            rows = (self.mean(u) - data.responses)[:, None] * data.covariates
        return _finite(rows, "per-sample gradient")

    def hessian(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        theta = self.check_data(data, theta)
        X = data.covariates
        with np.errstate(over='ignore', invalid='ignore'):
            w = self.weight(self._linear(data, theta))
            H = (X.T * w) @ X / data.n
        H = 0.5 * (H + H.T)
        return _finite(H, "Hessian")

    def per_sample_hessian_products(self, data: Dataset, theta: np.ndarray,
                                    left: np.ndarray, right: np.ndarray) -> np.ndarray:
        theta = self.check_data(data, theta)
        X = data.covariates
        left = np.atleast_2d(left)
        with np.errstate(over='ignore', invalid='ignore'):
            w = self.weight(self._linear(data, theta))
            products = (X @ left.T) * (w * (X @ np.asarray(right, dtype=float)))[:, None]
        return _finite(products, "Hessian product")


def regularized_solve(H: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, bool]:
    """
    Solve ``H x = b`` for symmetric ``H`` by Cholesky factorization.

    When the factorization fails or the condition number exceeds ``COND_LIMIT``
    a ridge of ``RIDGE_FACTOR * trace(H) / p`` is added and the solve retried.

    Returns:
        Solution and whether the ridge was applied
    """
    H = np.asarray(H, dtype=float)
    p = H.shape[0]
    try:
        if np.linalg.cond(H) <= COND_LIMIT:
            return cho_solve(cho_factor(H), b), False
    except (LinAlgError, ValueError):
        pass

    ridge = RIDGE_FACTOR * np.trace(H) / p
    if not ridge > 0:
        ridge = RIDGE_FACTOR
    logger.warning(f"Ill-conditioned Hessian, adding ridge {ridge:.3e}")
    try:
        return cho_solve(cho_factor(H + ridge * np.eye(p)), b), True
    except (LinAlgError, ValueError) as e:
        raise NumericOverflowError(f"Hessian is not positive definite after ridge: {e}") from e


def regularized_inverse(H: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix under the ridge rule."""
    inverse, _ = regularized_solve(H, np.eye(H.shape[0]))
    return 0.5 * (inverse + inverse.T)


def local_m_estimate(model: BaseLossModel, data: Dataset,
                     theta0: Optional[np.ndarray] = None,
                     opts: Optional[SolverOpts] = None) -> SolverResult:
    """
    Damped Newton minimization of the shard loss.

    The step is multiplied by ``opts.damping`` while the loss does not
    decrease, at most ``MAX_HALVINGS`` times; after that the current iterate
    is returned with ``converged=False``.

    A minimizer may not exist, for instance for logistic loss on separable
    data, where the loss keeps falling while ``|theta|`` grows and every
    Hessian weight goes to zero. Iteration stops with ``converged=False`` and
    ``diverged=True`` once ``trace(H)`` falls below ``CURVATURE_COLLAPSE``
    times its value at the starting point, or ``|theta|`` exceeds
    ``opts.max_norm``. The returned iterate is the last one before that.
    """
    opts = opts or SolverOpts()
    theta = np.zeros(model.p) if theta0 is None else np.array(theta0, dtype=float)
    loss = model.loss_value(data, theta)
    grad = model.gradient(data, theta)
    grad_norm = float(np.linalg.norm(grad))
    hessian = model.hessian(data, theta)
    start_trace = float(np.trace(hessian))

    for iteration in range(1, opts.max_iter + 1):
        if grad_norm <= opts.tol:
            return SolverResult(theta, True, iteration - 1, grad_norm)

        direction, _ = regularized_solve(hessian, grad)
        step = 1.0
        for _ in range(MAX_HALVINGS + 1):
            candidate = theta - step * direction
            try:
                candidate_loss = model.loss_value(data, candidate)
            except NumericOverflowError:
                candidate_loss = np.inf
            if candidate_loss <= loss:
                break
            step *= opts.damping
        else:
            logger.warning(
                f"Newton line search stalled after {MAX_HALVINGS} reductions "
                f"(iteration {iteration}, |grad|={grad_norm:.3e})"
            )
            return SolverResult(theta, False, iteration, grad_norm)

        candidate_hessian = model.hessian(data, candidate)
        if (np.trace(candidate_hessian) < CURVATURE_COLLAPSE * start_trace
                or np.linalg.norm(candidate) > opts.max_norm):
            logger.warning(
                f"Newton iterate diverging at iteration {iteration}: "
                f"|theta|={np.linalg.norm(candidate):.3e}, "
                f"trace(H)={np.trace(candidate_hessian):.3e} (start {start_trace:.3e})"
            )
            return SolverResult(theta, False, iteration, grad_norm, diverged=True)

        theta, loss, hessian = candidate, candidate_loss, candidate_hessian
        grad = model.gradient(data, theta)
        grad_norm = float(np.linalg.norm(grad))

    converged = grad_norm <= opts.tol
    if not converged:
        logger.warning(f"Newton solver hit max_iter={opts.max_iter} with |grad|={grad_norm:.3e}")
    return SolverResult(theta, converged, opts.max_iter, grad_norm)


def _finite(value, what: str):
    if not np.all(np.isfinite(value)):
        raise NumericOverflowError(f"Non-finite {what} (overflow in exp?)")
    return value
