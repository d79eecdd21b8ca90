"""Loss model registry."""

from typing import Dict, List, Type, Union

from ..exceptions import ConfigError
from .base_model import (
    BaseLossModel,
    Dataset,
    GlmLossModel,
    ModelKind,
    ModelSpec,
    SolverOpts,
    SolverResult,
    local_m_estimate,
    regularized_inverse,
    regularized_solve,
)
from .logistic_model import LogisticModel
from .poisson_model import PoissonModel
from .quadratic_model import QuadraticModel

MODEL_REGISTRY: Dict[ModelKind, Type[BaseLossModel]] = {
    ModelKind.LOGISTIC: LogisticModel,
    ModelKind.POISSON: PoissonModel,
    ModelKind.QUADRATIC: QuadraticModel,
}


def get_model(spec: Union[ModelSpec, str, ModelKind], p: int = None) -> BaseLossModel:
    """
    Instantiate the loss model for ``spec``.

    Accepts either a :class:`ModelSpec` or a kind name plus ``p``.
    """
    if isinstance(spec, ModelSpec):
        kind, p = spec.kind, spec.p
    else:
        try:
            kind = ModelKind(str(spec).lower())
        except ValueError:
            raise ConfigError(
                f"Unknown model '{spec}', available: {', '.join(available_models())}"
            ) from None
        if p is None:
            raise ConfigError("Parameter dimension p is required")
    return MODEL_REGISTRY[kind](int(p))


def available_models() -> List[str]:
    """Names of the registered loss models."""
    return [kind.value for kind in MODEL_REGISTRY]


__all__ = [
    'BaseLossModel',
    'Dataset',
    'GlmLossModel',
    'LogisticModel',
    'ModelKind',
    'ModelSpec',
    'PoissonModel',
    'QuadraticModel',
    'SolverOpts',
    'SolverResult',
    'available_models',
    'get_model',
    'local_m_estimate',
    'regularized_inverse',
    'regularized_solve',
]
