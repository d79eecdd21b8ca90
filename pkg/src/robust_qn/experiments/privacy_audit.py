"""
Noise-plan and composition tables for one experiment setting.

Norm-dependent scales s3..s5 are reported per unit norm factor; the realized
values of a run are in its ledger.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from ..privacy import (
    NormFactors,
    compose_advanced,
    empirical_privacy_loss,
    gauss_sigma,
    mean_sensitivity,
    noise_plan,
    variance_fail_prob,
)
from ..utils import make_rng
from .replication import ExperimentConfig

logger = logging.getLogger(__name__)

AUDIT_COLUMNS = ['section', 'name', 'value']
AUDIT_DRAWS = 200_000


@dataclass
class PrivacyAudit:
    noise_scales: List[Tuple[str, float]] = field(default_factory=list)
    composition: List[Tuple[str, float]] = field(default_factory=list)
    empirical: List[Tuple[str, float]] = field(default_factory=list)

    def rows(self) -> List[Tuple[str, str, float]]:
        out = []
        for section in ('noise_scales', 'composition', 'empirical'):
            out.extend((section, name, value) for name, value in getattr(self, section))
        return out


def privacy_audit(cfg: ExperimentConfig, draws: int = AUDIT_DRAWS,
                  seed: Optional[int] = None) -> PrivacyAudit:
    """Noise scales at local size ``cfg.n``, basic vs advanced composition, and a loss check."""
    params = cfg.privacy()
    unit = NormFactors(s3=np.ones(1), s4=1.0, s5=np.ones(1))
    plan = noise_plan(params, cfg.p, cfg.n, norms=unit, tail=cfg.tail)

    audit = PrivacyAudit()
    audit.noise_scales = [
        ('s1', plan.s1),
        ('s2', plan.s2),
        ('s3_per_unit_norm', float(plan.s3_by_machine[0])),
        ('s4_per_unit_norm', float(plan.s4)),
        ('s5_per_unit_norm', float(plan.s5_by_machine[0])),
        ('s6', plan.s6),
    ]

    k = cfg.rounds
    eps_adv, delta_adv = compose_advanced(k, params.epsilon, params.delta, cfg.delta_tilde)
    bound = mean_sensitivity(cfg.tail, params.gammas[1], cfg.p, cfg.n)
    audit.composition = [
        ('rounds', float(k)),
        ('epsilon_per_round', params.epsilon),
        ('delta_per_round', params.delta),
        ('epsilon_basic', k * params.epsilon),
        ('delta_basic', k * params.delta),
        ('epsilon_advanced', eps_adv),
        ('delta_advanced', delta_adv),
        ('gradient_sensitivity', bound.sensitivity),
        ('gradient_fail_bound', bound.fail_prob),
    ]
    if cfg.variant != 'standard':
        audit.composition.append(
            ('variance_fail_bound', variance_fail_prob(params.gammas[5], cfg.p, cfg.n)))

    sigma = gauss_sigma(bound.sensitivity, params.epsilon, params.delta)
    rng = make_rng(cfg.master_seed if seed is None else seed, 'privacy-audit')
    loss = empirical_privacy_loss(sigma, bound.sensitivity, params.epsilon, draws, rng)
    audit.empirical = [
        ('gaussian_sigma', sigma),
        ('exceed_fraction', loss.exceed_fraction),
        ('exceed_std_error', loss.std_error),
        ('exceed_analytic', loss.analytic),
        ('delta_target', params.delta),
    ]
    return audit


def write_audit_csv(audit: PrivacyAudit, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(AUDIT_COLUMNS)
        for section, name, value in audit.rows():
            writer.writerow([section, name, repr(float(value))])
    logger.info(f"Wrote privacy audit to {path}")
    return path
