"""Monte Carlo efficiency of the DCQ and the coordinate median relative to the mean."""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict

import numpy as np

from ..aggregation import DcqConfig, coord_median, dcq_vector, dk_constant
from ..exceptions import ConfigError
from ..utils import make_rng

logger = logging.getLogger(__name__)

BATCH_REPS = 500


@dataclass
class EfficiencyReport:
    M: int
    K: int
    reps: int
    var_mean: float
    var_dcq: float
    var_median: float
    dk: float

    @property
    def dcq_ratio(self) -> float:
        """var(mean) / var(dcq); the asymptotic value is 1 / D_K."""
        return self.var_mean / self.var_dcq

    @property
    def median_ratio(self) -> float:
        return self.var_mean / self.var_median

    @property
    def asymptotic_ratio(self) -> float:
        return 1.0 / self.dk

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out.update(dcq_ratio=self.dcq_ratio, median_ratio=self.median_ratio,
                   asymptotic_ratio=self.asymptotic_ratio)
        return out


def efficiency_monte_carlo(M: int = 2001, K: int = 10, reps: int = 5000,
                           seed: int = 2024) -> EfficiencyReport:
    """
    Variance of mean, median and DCQ over ``reps`` samples of M standard normals.

    Each replicate is one column of an M x batch matrix, so a single
    :func:`dcq_vector` call aggregates a whole batch with known unit scale.
    """
    if M < 1 or reps < 2:
        raise ConfigError(f"need M >= 1 and reps >= 2, got M={M}, reps={reps}")
    cfg = DcqConfig.from_k(K)
    rng = make_rng(seed, 'dcq-demo')

    means, medians, dcqs = [], [], []
    remaining = reps
    while remaining > 0:
        batch = min(BATCH_REPS, remaining)
        values = rng.standard_normal((M, batch))
        means.append(values.mean(axis=0))
        medians.append(coord_median(values))
        dcqs.append(dcq_vector(values, 1.0, 1.0, cfg))
        remaining -= batch

    report = EfficiencyReport(
        M=M, K=K, reps=reps,
        var_mean=float(np.var(np.concatenate(means), ddof=1)),
        var_dcq=float(np.var(np.concatenate(dcqs), ddof=1)),
        var_median=float(np.var(np.concatenate(medians), ddof=1)),
        dk=dk_constant(cfg),
    )
    logger.info(f"DCQ efficiency M={M} K={K}: dcq {report.dcq_ratio:.4f}, "
                f"median {report.median_ratio:.4f}, 1/D_K {report.asymptotic_ratio:.4f}")
    return report
