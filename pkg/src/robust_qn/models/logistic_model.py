import numpy as np
from scipy.special import expit

from ..exceptions import InvalidDataError
from .base_model import GlmLossModel, ModelKind


class LogisticModel(GlmLossModel):
    """Logistic regression loss f = log(1 + exp(x'theta)) - y x'theta with y in {0, 1}."""

    @property
    def kind(self) -> ModelKind:
        return ModelKind.LOGISTIC

    def cumulant(self, u: np.ndarray) -> np.ndarray:
        # logaddexp evaluates u + log1p(exp(-u)) for large u
        return np.logaddexp(0.0, u)

    def mean(self, u: np.ndarray) -> np.ndarray:
        return expit(u)

    def weight(self, u: np.ndarray) -> np.ndarray:
        mu = expit(u)
        return mu * (1.0 - mu)

    def check_responses(self, responses: np.ndarray) -> None:
        if not np.all((responses == 0.0) | (responses == 1.0)):
            raise InvalidDataError("logistic responses must be 0 or 1")

    def predict_proba(self, covariates: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """P(y = 1 | x) for each row of ``covariates``."""
        return expit(np.asarray(covariates, dtype=float) @ np.asarray(theta, dtype=float))
