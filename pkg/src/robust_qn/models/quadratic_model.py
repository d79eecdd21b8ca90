import numpy as np

from ..exceptions import NumericOverflowError
from .base_model import BaseLossModel, Dataset, ModelKind


class QuadraticModel(BaseLossModel):
    """
    Location model f(x, theta) = |x - theta|^2 / 2.

    The Hessian is the identity, so the local M-estimator is the shard mean.
    """

    @property
    def kind(self) -> ModelKind:
        return ModelKind.QUADRATIC

    def sample_losses(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        diff = data.covariates - theta
        return 0.5 * np.einsum('ij,ij->i', diff, diff)

    def per_sample_gradient_rows(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        theta = self.check_data(data, theta)
        return theta - data.covariates

    def gradient(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        theta = self.check_data(data, theta)
        grad = theta - data.covariates.mean(axis=0)
        if not np.all(np.isfinite(grad)):
            raise NumericOverflowError("Non-finite gradient")
        return grad

    def hessian(self, data: Dataset, theta: np.ndarray) -> np.ndarray:
        self.check_data(data, theta)
        return np.eye(self.p)

    def per_sample_hessian_products(self, data: Dataset, theta: np.ndarray,
                                    left: np.ndarray, right: np.ndarray) -> np.ndarray:
        self.check_data(data, theta)
        row = np.atleast_2d(left) @ np.asarray(right, dtype=float)
        return np.tile(row, (data.n, 1))
