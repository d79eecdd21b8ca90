"""
Gaussian-mechanism privacy for the distributed protocol.

Contents:

* :func:`gauss_sigma` and :func:`mean_sensitivity`, the calibration primitives;
* :func:`noise_plan`, the per-round noise scales ``s1`` .. ``s6``;
* :func:`add_gaussian_noise`;
* :func:`compose_advanced` and :class:`PrivacyLedger` for budget accounting;
* :func:`empirical_privacy_loss`, a Monte Carlo audit of the mechanism.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm

from .exceptions import MissingNoiseScaleError, PrivacyDomainError

logger = logging.getLogger(__name__)

LEDGER_COLUMNS = ['round', 'machine', 's_value', 'epsilon', 'delta', 'fail_bound']


class MeanDist(str, Enum):
    SUB_GAUSSIAN = "sub_gaussian"
    SUB_EXPONENTIAL = "sub_exponential"


def _check_eps_delta(epsilon: float, delta: float) -> None:
    if not epsilon > 0:
        raise PrivacyDomainError(f"epsilon must be positive, got {epsilon}")
    if not 0 < delta < 1:
        raise PrivacyDomainError(f"delta must lie in (0, 1), got {delta}")


@dataclass
class PrivacyParams:
    """
    Per-round privacy parameters.

    ``epsilon`` and ``delta`` apply to each transmitted vector. The
    sub-exponential parameters ``nu_*``/``alpha_*`` only enter the reported
    failure-probability bounds, never the noise magnitude.
    """

    epsilon: float
    delta: float
    gammas: Tuple[float, ...] = (2.0, 2.0, 2.0, 2.0, 2.0, 2.0)
    lambda_s: float = 1.0
    nu_g: float = 1.0
    alpha_g: float = 1.0
    nu_h: float = 1.0
    alpha_h: float = 1.0
    delta_base: float = field(init=False)

    def __post_init__(self):
        _check_eps_delta(self.epsilon, self.delta)
        self.gammas = tuple(float(g) for g in self.gammas)
        if len(self.gammas) != 6 or min(self.gammas) <= 0:
            raise PrivacyDomainError(f"need six positive gamma constants, got {self.gammas}")
        if self.lambda_s <= 0:
            raise PrivacyDomainError(f"lambda_s must be positive, got {self.lambda_s}")
        for name in ('nu_g', 'alpha_g', 'nu_h', 'alpha_h'):
            if getattr(self, name) <= 0:
                raise PrivacyDomainError(f"{name} must be positive")
        self.delta_base = math.sqrt(2.0 * math.log(1.0 / self.delta)) / self.epsilon

    @classmethod
    def per_round(cls, epsilon_total: float, delta_total: float, rounds: int = 5,
                  **kwargs) -> "PrivacyParams":
        """Split a total budget evenly over ``rounds`` transmitted vectors."""
        _check_eps_delta(epsilon_total, delta_total)
        return cls(epsilon=epsilon_total / rounds, delta=delta_total / rounds, **kwargs)


@dataclass(frozen=True)
class SensitivityBound:
    sensitivity: float
    fail_prob: float


def gauss_sigma(sensitivity: float, epsilon: float, delta: float) -> float:
    """Noise standard deviation sqrt(2 log(1.25/delta)) * sensitivity / epsilon."""
    if sensitivity < 0:
        raise PrivacyDomainError(f"sensitivity must be nonnegative, got {sensitivity}")
    _check_eps_delta(epsilon, delta)
    return math.sqrt(2.0 * math.log(1.25 / delta)) * sensitivity / epsilon


def mean_sensitivity(dist: Union[MeanDist, str], gamma: float, p: int, n: int,
                     nu: float = 1.0, alpha: float = 1.0) -> SensitivityBound:
    """
    High-probability l2 sensitivity of a p-dimensional sample mean.

    Sub-Gaussian summands give ``2 gamma sqrt(p log n) / n``; sub-exponential
    ones give ``2 gamma sqrt(p) log n / n``. The returned ``fail_prob`` bounds
    the probability that the sensitivity statement does not hold.
    """
    dist = MeanDist(dist)
    if n < 2:
        raise PrivacyDomainError(f"sensitivity bounds need n >= 2, got {n}")
    if gamma <= 0 or p < 1:
        raise PrivacyDomainError("gamma must be positive and p >= 1")

    log_n = math.log(n)
    if dist is MeanDist.SUB_GAUSSIAN:
        sensitivity = 2.0 * gamma * math.sqrt(p * log_n) / n
        fail = 2.0 * p * n ** (-gamma ** 2 / nu ** 2)
    else:
        sensitivity = 2.0 * gamma * math.sqrt(p) * log_n / n
        fail = 2.0 * p * max(n ** (-gamma ** 2 * log_n / nu ** 2), n ** (-gamma / alpha))
    return SensitivityBound(sensitivity=sensitivity, fail_prob=min(fail, 1.0))


def variance_fail_prob(gamma: float, p: int, n: int, nu: float = 1.0) -> float:
    """Failure probability ``8 p n^(-gamma / nu^2)`` of the sample-variance sensitivity bound."""
    if n < 2:
        raise PrivacyDomainError(f"sensitivity bounds need n >= 2, got {n}")
    if gamma <= 0 or p < 1:
        raise PrivacyDomainError("gamma must be positive and p >= 1")
    return min(1.0, 8.0 * p * n ** (-gamma / nu ** 2))


@dataclass
class NormFactors:
    """Machine-local norm factors known once the matching round runs."""

    s3: Optional[np.ndarray] = None
    s4: Optional[float] = None
    s5: Optional[np.ndarray] = None


@dataclass
class NoisePlan:
    """Noise standard deviations for every transmitted vector."""

    s1: float
    s2: float
    s6: float
    s3_by_machine: Optional[np.ndarray] = None
    s4: Optional[float] = None
    s5_by_machine: Optional[np.ndarray] = None
    enabled: bool = True

    @classmethod
    def zero(cls, norms: Optional[NormFactors] = None) -> "NoisePlan":
        """Plan with every available scale set to zero (DP disabled)."""
        norms = norms or NormFactors()
        return cls(
            s1=0.0, s2=0.0, s6=0.0,
            s3_by_machine=None if norms.s3 is None else np.zeros(len(norms.s3)),
            s4=None if norms.s4 is None else 0.0,
            s5_by_machine=None if norms.s5 is None else np.zeros(len(norms.s5)),
            enabled=False,
        )

    def require(self, name: str):
        """Scale ``name`` or :class:`MissingNoiseScaleError` if its norms are not known yet."""
        value = getattr(self, name)
        if value is None:
            raise MissingNoiseScaleError(f"noise scale '{name}' needs norm factors that are not available")
        return value

    def as_dict(self) -> Dict[str, object]:
        return {
            's1': self.s1,
            's2': self.s2,
            's3_by_machine': None if self.s3_by_machine is None else self.s3_by_machine.tolist(),
            's4': self.s4,
            's5_by_machine': None if self.s5_by_machine is None else self.s5_by_machine.tolist(),
            's6': self.s6,
        }


def noise_plan(params: PrivacyParams, p: int, n: int, norms: Optional[NormFactors] = None,
               enabled: bool = True, tail: Union[MeanDist, str] = MeanDist.SUB_EXPONENTIAL
               ) -> NoisePlan:
    """
    Evaluate the noise scales s1 .. s6.

    The plan is rebuilt as norm factors become available: ``s3`` needs
    ``|H_j^{-1} g_cq|`` per machine, ``s4`` needs ``|theta_os - theta_cq|`` and
    ``s5`` needs ``|V1 H_j^{-1}| * |H_j^{-1} V1 g_os|`` per machine. With
    ``enabled=False`` every available scale is zero.
    """
    if n < 2:
        raise PrivacyDomainError(f"noise scales need n >= 2, got {n}")
    norms = norms or NormFactors()
    if not enabled:
        return NoisePlan.zero(norms)
    tail = MeanDist(tail)

    log_n = math.log(n)
    # sub-Gaussian gradients and Hessians shrink log n to sqrt(log n)
    growth = math.sqrt(log_n) if tail is MeanDist.SUB_GAUSSIAN else log_n
    base = math.sqrt(p) * growth * params.delta_base / n
    g1, g2, g3, g4, g5, g6 = params.gammas
    lam = params.lambda_s

    s1 = 2.02 * g1 * base / lam
    s2 = 2.0 * g2 * base
    s6 = (math.sqrt(2.0) * g6 * p * (4.0 * log_n + 1.0)
          * math.sqrt(math.log(1.25 * p / params.delta)) / (n * params.epsilon))

    s3 = None if norms.s3 is None else 2.02 * g3 * base * np.asarray(norms.s3, dtype=float) / lam
    s4 = None if norms.s4 is None else 2.0 * g4 * base * float(norms.s4)
    s5 = None if norms.s5 is None else 2.02 * g5 * base * np.asarray(norms.s5, dtype=float)

    return NoisePlan(s1=s1, s2=s2, s6=s6, s3_by_machine=s3, s4=s4, s5_by_machine=s5)


def add_gaussian_noise(v: np.ndarray, s: float, rng: np.random.Generator) -> np.ndarray:
    """``v`` plus independent N(0, s^2) noise per coordinate; ``s = 0`` returns a copy."""
    v = np.asarray(v, dtype=float)
    if s < 0:
        raise PrivacyDomainError(f"noise scale must be nonnegative, got {s}")
    if s == 0:
        return v.copy()
    return v + rng.normal(0.0, s, size=v.shape)


def compose_advanced(k: int, epsilon: float, delta: float,
                     delta_tilde: float) -> Tuple[float, float]:
    """
    k-fold adaptive composition of (epsilon, delta) mechanisms.

    Returns ``(eps_tilde, delta_total)`` with eps_tilde the minimum of the
    basic bound ``k eps`` and the two optimal-composition bounds, and
    ``delta_total = 1 - (1 - delta)^k (1 - delta_tilde)``.
    """
    if k < 1:
        raise PrivacyDomainError(f"k must be >= 1, got {k}")
    if not 0 < delta_tilde < 1:
        raise PrivacyDomainError(f"delta_tilde must lie in (0, 1), got {delta_tilde}")
    _check_eps_delta(epsilon, delta)

    ratio = math.expm1(epsilon) / (math.exp(epsilon) + 1.0)
    drift = ratio * k * epsilon
    eps_tilde = min(
        k * epsilon,
        drift + epsilon * math.sqrt(2.0 * k * math.log(math.e + math.sqrt(k * epsilon ** 2) / delta_tilde)),
        drift + epsilon * math.sqrt(2.0 * k * math.log(1.0 / delta_tilde)),
    )
    delta_total = 1.0 - (1.0 - delta) ** k * (1.0 - delta_tilde)
    return eps_tilde, delta_total


@dataclass
class LedgerEntry:
    round_label: str
    epsilon: float
    delta: float
    fail_bound: float
    s_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    machines: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def machine_ids(self) -> np.ndarray:
        """Sender ids aligned with ``s_values``; positions when none were recorded."""
        if self.machines.size == self.s_values.size:
            return self.machines
        return np.arange(self.s_values.size)


class PrivacyLedger:
    """
    Per-round privacy record owned by the orchestrator.

    Only the orchestrator writes to the ledger, and only between rounds.
    """

    def __init__(self):
        self.entries: List[LedgerEntry] = []

    def record(self, round_label: str, epsilon_i: float, delta_i: float, fail_prob: float,
               s_values: Optional[Sequence[float]] = None,
               machines: Optional[Sequence[int]] = None) -> "PrivacyLedger":
        _check_eps_delta(epsilon_i, delta_i)
        s = np.zeros(0) if s_values is None else np.atleast_1d(np.asarray(s_values, dtype=float))
        ids = np.zeros(0, dtype=int) if machines is None else np.asarray(list(machines), dtype=int)
        if ids.size and ids.size != s.size:
            raise PrivacyDomainError(f"{ids.size} machine ids for {s.size} noise scales")
        self.entries.append(LedgerEntry(round_label, float(epsilon_i), float(delta_i),
                                        float(fail_prob), s, ids))
        return self

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def totals(self) -> Tuple[float, float]:
        """Basic composition (sum of epsilons, sum of deltas)."""
        return (float(sum(e.epsilon for e in self.entries)),
                float(sum(e.delta for e in self.entries)))

    @property
    def p_total(self) -> float:
        """Probability that every per-round sensitivity statement holds (union bound)."""
        return 1.0 - float(sum(e.fail_bound for e in self.entries))

    def advanced(self, delta_tilde: float) -> Tuple[float, float]:
        """Advanced composition over the recorded rounds using the largest per-round budget."""
        if not self.entries:
            return 0.0, 0.0
        return compose_advanced(len(self.entries),
                                max(e.epsilon for e in self.entries),
                                max(e.delta for e in self.entries),
                                delta_tilde)

    def rows(self) -> List[Dict[str, object]]:
        """One row per (round, machine) realized noise scale."""
        rows = []
        for entry in self.entries:
            for machine, s in zip(entry.machine_ids(), entry.s_values):
                rows.append({
                    'round': entry.round_label,
                    'machine': int(machine),
                    's_value': float(s),
                    'epsilon': entry.epsilon,
                    'delta': entry.delta,
                    'fail_bound': entry.fail_bound,
                })
        return rows

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=LEDGER_COLUMNS, lineterminator='\n')
            writer.writeheader()
            writer.writerows(self.rows())
        logger.debug(f"Wrote privacy ledger with {len(self.entries)} rounds to {path}")
        return path


def ledger_record(ledger: PrivacyLedger, round_label: str, epsilon_i: float, delta_i: float,
                  fail_prob: float) -> PrivacyLedger:
    """Functional form of :meth:`PrivacyLedger.record`."""
    return ledger.record(round_label, epsilon_i, delta_i, fail_prob)


@dataclass(frozen=True)
class PrivacyLossAudit:
    exceed_fraction: float
    std_error: float
    analytic: float
    draws: int


def empirical_privacy_loss(sigma: float, sensitivity: float, epsilon: float, draws: int,
                           rng: np.random.Generator) -> PrivacyLossAudit:
    """
    Monte Carlo estimate of P(L > epsilon) for the Gaussian mechanism.

    The mechanism releases a statistic that is 0 on one dataset and
    ``sensitivity`` on an adjacent one. ``L`` is the log-likelihood ratio of
    the two output densities at a draw from the first. A correctly
    calibrated mechanism keeps the exceedance probability below delta.
    """
    if sigma <= 0 or sensitivity <= 0:
        raise PrivacyDomainError("sigma and sensitivity must be positive for an audit")
    outputs = rng.normal(0.0, sigma, size=int(draws))
    loss = norm.logpdf(outputs, 0.0, sigma) - norm.logpdf(outputs, sensitivity, sigma)
    frac = float(np.mean(loss > epsilon))
    analytic = float(norm.sf(epsilon * sigma / sensitivity - sensitivity / (2.0 * sigma)))
    return PrivacyLossAudit(
        exceed_fraction=frac,
        std_error=math.sqrt(max(frac * (1.0 - frac), 1e-300) / draws),
        analytic=analytic,
        draws=int(draws),
    )
