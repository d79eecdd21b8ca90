import numpy as np

from ..exceptions import InvalidDataError
from .base_model import GlmLossModel, ModelKind


class PoissonModel(GlmLossModel):
    """Poisson regression loss f = exp(x'theta) - y x'theta for count responses."""

    @property
    def kind(self) -> ModelKind:
        return ModelKind.POISSON

    def cumulant(self, u: np.ndarray) -> np.ndarray:
        return np.exp(u)

    def mean(self, u: np.ndarray) -> np.ndarray:
        return np.exp(u)

    def weight(self, u: np.ndarray) -> np.ndarray:
        return np.exp(u)

    def check_responses(self, responses: np.ndarray) -> None:
        if np.any(responses < 0) or not np.all(responses == np.floor(responses)):
            raise InvalidDataError("Poisson responses must be nonnegative integers")
