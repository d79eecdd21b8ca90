"""
The three-stage robust distributed quasi-Newton protocol.

Stage 1 aggregates privatized local M-estimators with the DCQ. Stage 2 takes
one Newton step using DCQ-aggregated gradients and Newton directions. Stage 3
updates every local inverse Hessian with one BFGS step and repeats the Newton
step with the updated curvature. Node machines transmit five vectors in total;
the center broadcasts four.

The unreliable-center variant replaces every DCQ with the coordinate median
except the stage-2 gradient aggregation, whose scale comes from privatized
node-side variances.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .aggregation import (
    DcqConfig,
    coord_median,
    dcq_vector,
    gradient_difference_variance,
    gradient_entry_variance,
    h1_entry_variance,
    h3_entry_variance,
    sandwich_variance,
)
from .cluster import Cluster, Machine, Transcript
from .exceptions import ConfigError, ProtocolError
from .models import BaseLossModel, SolverOpts, local_m_estimate, regularized_inverse
from .privacy import (
    MeanDist,
    NoisePlan,
    NormFactors,
    PrivacyLedger,
    PrivacyParams,
    mean_sensitivity,
    noise_plan,
    variance_fail_prob,
)
from .utils import DebugLogger

logger = logging.getLogger(__name__)

# node-to-center rounds
ROUND_THETA_LOCAL = "theta_local"
ROUND_GRAD = "grad_cq"
ROUND_GRAD_VAR = "grad_var"
ROUND_H1 = "h1"
ROUND_GRAD_DIFF = "grad_diff"
ROUND_H3 = "h3"
# center-to-node broadcasts
ROUND_THETA_CQ = "theta_cq"
ROUND_GRAD_HAT = "grad_cq_hat"
ROUND_THETA_OS = "theta_os"
ROUND_GRAD_DIFF_HAT = "grad_diff_hat"

ROUND_NAIVE = "theta_naive"

# privatized node uploads per run
UPLOAD_ROUNDS = {"standard": 5, "unreliable-center": 6}

# gamma index and gradient/Hessian tail for each privatized round
_ROUND_GAMMA = {
    ROUND_THETA_LOCAL: (0, 'g'),
    ROUND_GRAD: (1, 'g'),
    ROUND_H1: (2, 'h'),
    ROUND_GRAD_DIFF: (3, 'h'),
    ROUND_H3: (4, 'h'),
    ROUND_GRAD_VAR: (5, 'g'),
}


@dataclass
class ProtocolConfig:
    """Knobs of one protocol run."""

    K: int = 10
    solver: SolverOpts = field(default_factory=SolverOpts)
    curvature_floor: float = 1e-12
    max_failed_fraction: float = 0.5
    parallel_machines: int = 1
    dp_enabled: bool = True
    tail: str = MeanDist.SUB_EXPONENTIAL.value

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if not 0 < self.max_failed_fraction <= 1:
            raise ConfigError("max_failed_fraction must lie in (0, 1]")
        self.tail = MeanDist(self.tail).value

    @property
    def dcq(self) -> DcqConfig:
        return DcqConfig.from_k(self.K)

    @classmethod
    def from_config(cls, protocol: Dict[str, Any], **overrides) -> "ProtocolConfig":
        """Build from the ``protocol`` section of the framework config."""
        solver = protocol.get('solver', {})
        values = {
            'K': int(protocol.get('K', 10)),
            'solver': SolverOpts(
                tol=float(solver.get('tol', 1e-8)),
                max_iter=int(solver.get('max_iter', 100)),
                damping=float(solver.get('damping', 0.5)),
                max_norm=float(solver.get('max_norm', 1e4)),
            ),
            'curvature_floor': float(protocol.get('curvature_floor', 1e-12)),
            'max_failed_fraction': float(protocol.get('max_failed_fraction', 0.5)),
            'parallel_machines': int(protocol.get('parallel_machines', 1)),
        }
        values.update(overrides)
        return cls(**values)


@dataclass
class BfgsState:
    rho1: float
    V1: np.ndarray
    step: np.ndarray
    gdiff: np.ndarray
    applied: bool = True


@dataclass
class StageEstimates:
    theta_cq: np.ndarray
    theta_os: np.ndarray
    theta_qn: np.ndarray
    transcript: Transcript
    ledger: PrivacyLedger
    bfgs: Optional[BfgsState] = None
    flags: Dict[str, Any] = field(default_factory=dict)
    variant: str = "standard"
    elapsed: float = 0.0

    def errors(self, theta_star: np.ndarray) -> Dict[str, float]:
        """Euclidean error of each stage estimate."""
        return {
            'cq': float(np.linalg.norm(self.theta_cq - theta_star)),
            'os': float(np.linalg.norm(self.theta_os - theta_star)),
            'qn': float(np.linalg.norm(self.theta_qn - theta_star)),
        }

    def summary(self, theta_star: Optional[np.ndarray] = None,
                delta_tilde: float = 0.01) -> Dict[str, Any]:
        """Flat dictionary used by the CLI tables and the trace log."""
        eps_sum, delta_sum = self.ledger.totals
        eps_adv, delta_adv = self.ledger.advanced(delta_tilde)
        out: Dict[str, Any] = {
            'variant': self.variant,
            'upload_rounds': len(self.transcript.upload_rounds),
            'broadcast_rounds': len(self.transcript.broadcast_rounds),
            'bytes_sent': self.transcript.bytes_sent,
            'epsilon_basic': eps_sum,
            'delta_basic': delta_sum,
            'epsilon_advanced': eps_adv,
            'delta_advanced': delta_adv,
            'p_total': self.ledger.p_total if len(self.ledger) else 1.0,
            'bfgs_applied': bool(self.bfgs.applied) if self.bfgs else False,
            'nonconverged_machines': list(self.flags.get('nonconverged_machines', [])),
            'elapsed': self.elapsed,
        }
        if theta_star is not None:
            out.update({f'error_{k}': v for k, v in self.errors(theta_star).items()})
        return out


def bfgs_inverse_update(Hinv: np.ndarray, step: np.ndarray, gdiff: np.ndarray,
                        curvature_floor: float = 1e-12) -> Tuple[np.ndarray, BfgsState]:
    """
    One BFGS update of an inverse Hessian.

    ``H+ = V^T H V + rho s s^T`` with ``rho = 1 / (s^T y)`` and
    ``V = I - rho y s^T``. When ``s^T y`` is not above
    ``curvature_floor * |s| |y|`` (negative curvature included) the input is
    returned unchanged with ``applied=False``, ``rho1=0`` and ``V1=I``.
    """
    Hinv = np.asarray(Hinv, dtype=float)
    step = np.asarray(step, dtype=float)
    gdiff = np.asarray(gdiff, dtype=float)
    p = step.shape[0]

    curvature = float(step @ gdiff)
    if curvature <= curvature_floor * np.linalg.norm(step) * np.linalg.norm(gdiff):
        logger.warning(f"Skipping BFGS update: curvature s'y={curvature:.3e} not positive")
        return Hinv.copy(), BfgsState(rho1=0.0, V1=np.eye(p), step=step, gdiff=gdiff, applied=False)

    rho = 1.0 / curvature
    V = np.eye(p) - rho * np.outer(gdiff, step)
    updated = V.T @ Hinv @ V + rho * np.outer(step, step)
    updated = 0.5 * (updated + updated.T)
    return updated, BfgsState(rho1=rho, V1=V, step=step, gdiff=gdiff, applied=True)


def h3_vector(Hinv_j: np.ndarray, bfgs: BfgsState, g_os: np.ndarray) -> np.ndarray:
    """Node part of the quasi-Newton direction, V1^T H_j^{-1} V1 g_os."""
    return bfgs.V1.T @ (Hinv_j @ (bfgs.V1 @ g_os))


def center_term(bfgs: BfgsState, g_os: np.ndarray) -> np.ndarray:
    """Center part of the quasi-Newton direction, rho s s^T g_os."""
    return bfgs.rho1 * bfgs.step * float(bfgs.step @ g_os)


def h2_vector(Hinv_j: np.ndarray, bfgs: BfgsState, g_os: np.ndarray) -> np.ndarray:
    """Full quasi-Newton direction from the BFGS-updated inverse Hessian."""
    updated = bfgs.V1.T @ Hinv_j @ bfgs.V1 + bfgs.rho1 * np.outer(bfgs.step, bfgs.step)
    return updated @ g_os


class QuasiNewtonProtocol:
    """
    Runs the protocol on one cluster.

    The instance owns the privacy ledger and the cross-stage state (local
    inverse Hessians, aggregated gradients); the cluster owns the transcript.
    """

    def __init__(self, cluster: Cluster, model: BaseLossModel,
                 cfg: Optional[ProtocolConfig] = None,
                 privacy: Optional[PrivacyParams] = None,
                 robust: bool = True):
        self.cluster = cluster
        self.model = model
        self.cfg = cfg or ProtocolConfig()
        if self.cfg.dp_enabled and privacy is None:
            raise ConfigError("privacy parameters are required when DP is enabled")
        self.privacy = privacy
        self.robust = robust
        self.dcq = self.cfg.dcq
        self.ledger = PrivacyLedger()
        self.flags: Dict[str, Any] = {'nonconverged_machines': []}
        self.debug_logger = DebugLogger()

        self.include_center = cluster.center.shard is not None
        self.central_data = cluster.center.shard if self.include_center else None
        self.n = cluster.n
        self.p = model.p
        self._local_hinv: Dict[int, np.ndarray] = {}

    # -- helpers -------------------------------------------------------------

    def _plan(self, norms: Optional[NormFactors] = None) -> NoisePlan:
        if not self.cfg.dp_enabled:
            return NoisePlan.zero(norms)
        return noise_plan(self.privacy, self.p, self.n, norms, tail=self.cfg.tail)

    def _participants(self) -> List[Machine]:
        return self.cluster.participants(self.include_center)

    def _record(self, round_label: str, s_values: np.ndarray,
                machine_ids: Optional[List[int]] = None) -> None:
        if not self.cfg.dp_enabled:
            return
        if machine_ids is None:
            machine_ids = [mc.id for mc in self._participants()]
        gamma_index, which = _ROUND_GAMMA[round_label]
        gamma = self.privacy.gammas[gamma_index]
        nu = self.privacy.nu_g if which == 'g' else self.privacy.nu_h
        alpha = self.privacy.alpha_g if which == 'g' else self.privacy.alpha_h
        if round_label == ROUND_GRAD_VAR:
            fail = variance_fail_prob(gamma, self.p, self.n, nu)
        else:
            fail = mean_sensitivity(self.cfg.tail, gamma, self.p, self.n, nu, alpha).fail_prob
        self.ledger.record(round_label, self.privacy.epsilon, self.privacy.delta,
                           min(1.0, len(machine_ids) * fail), s_values, machine_ids)

    def _aggregate(self, values: np.ndarray, variances: Optional[np.ndarray]) -> np.ndarray:
        if not self.robust or variances is None:
            return coord_median(values)
        sigma = np.sqrt(np.maximum(variances, 0.0))
        return dcq_vector(values, sigma, math.sqrt(self.n), self.dcq)

    def _local_hinv_at(self, theta: np.ndarray) -> Dict[int, np.ndarray]:
        model = self.model
        return self.cluster.map(
            lambda mc: regularized_inverse(model.hessian(mc.shard, theta)),
            include_center=self.include_center,
        )

    # -- stages ----------------------------------------------------------------

    def stage_initial(self) -> Tuple[np.ndarray, Dict[str, Any]]:
        """
        Local M-estimation, privatization with s1 and DCQ aggregation.

        Returns the initial estimate and the intermediates (median, per-coordinate
        sigma used by the DCQ).
        """
        model, solver = self.model, self.cfg.solver
        results = self.cluster.map(lambda mc: local_m_estimate(model, mc.shard, None, solver),
                                   include_center=self.include_center)

        failed = sorted(j for j, r in results.items() if not r.converged)
        self.flags['nonconverged_machines'] = failed
        self.flags['diverged_machines'] = sorted(j for j, r in results.items() if r.diverged)
        if failed:
            logger.warning(f"Local solver did not converge on machines {failed}")
        if len(failed) > self.cfg.max_failed_fraction * len(results):
            raise ProtocolError(
                f"local solver failed on {len(failed)} of {len(results)} machines: {failed}"
            )

        s1 = self._plan().s1
        thetas = self.cluster.emit_round(
            ROUND_THETA_LOCAL, {j: r.theta for j, r in results.items()}, s1,
            include_center=self.include_center,
        )
        self._record(ROUND_THETA_LOCAL, np.full(thetas.shape[0], s1))

        theta_med = coord_median(thetas)
        intermediates: Dict[str, Any] = {'theta_med': theta_med, 'sigma': None}
        if self.robust:
            sandwich = sandwich_variance(model, self.central_data, theta_med, self.n, s1)
            intermediates['sigma'] = sandwich.sigma
            theta_cq = self._aggregate(thetas, sandwich.total)
        else:
            theta_cq = theta_med

        self.cluster.broadcast(ROUND_THETA_CQ, theta_cq)
        self.debug_logger.log_stage("initial", {'theta_cq': theta_cq, 'failed': failed})
        return theta_cq, intermediates

    def _gradient_variances(self, theta_cq: np.ndarray, s2: float) -> np.ndarray:
        """Per-coordinate variance for the gradient DCQ."""
        model = self.model
        if self.include_center:
            return gradient_entry_variance(model, self.central_data, theta_cq, self.n, s2)

        # no central shard: nodes report privatized sample variances
        s6 = self._plan().s6
        variances = self.cluster.run_round(
            ROUND_GRAD_VAR,
            lambda mc: model.per_sample_gradient_rows(mc.shard, theta_cq).var(axis=0),
            s6, include_center=False,
        )
        self._record(ROUND_GRAD_VAR, np.full(variances.shape[0], s6),
                     [mc.id for mc in self.cluster.participants(include_center=False)])
        median_var = np.maximum(coord_median(variances), 0.0)
        self.flags['grad_var_median'] = median_var
        return median_var + self.n * s2 ** 2

    def stage_one_step(self, theta_cq: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """One Newton step from ``theta_cq``; returns (theta_os, aggregated gradient)."""
        model = self.model
        s2 = self._plan().s2
        grads = self.cluster.run_round(
            ROUND_GRAD, lambda mc: model.gradient(mc.shard, theta_cq), s2,
            include_center=self.include_center,
        )
        self._record(ROUND_GRAD, np.full(grads.shape[0], s2))

        grad_var = self._gradient_variances(theta_cq, s2)
        g_cq = dcq_vector(grads, np.sqrt(grad_var), math.sqrt(self.n), self.dcq)
        self.cluster.broadcast(ROUND_GRAD_HAT, g_cq)

        self._local_hinv = self._local_hinv_at(theta_cq)
        h1_honest = {j: H @ g_cq for j, H in self._local_hinv.items()}
        s3_norms = np.zeros(self.cluster.m + 1)
        for j, h in h1_honest.items():
            s3_norms[j] = np.linalg.norm(h)
        s3 = self._plan(NormFactors(s3=s3_norms)).require('s3_by_machine')

        h1_rows = self.cluster.emit_round(ROUND_H1, h1_honest, s3,
                                          include_center=self.include_center)
        self._record(ROUND_H1, np.array([s3[mc.id] for mc in self._participants()]))

        variances = None
        if self.robust:
            variances = h1_entry_variance(model, self.central_data, theta_cq, g_cq,
                                          self.n, float(s3[0]))
        H1 = self._aggregate(h1_rows, variances)
        theta_os = theta_cq - H1

        self.cluster.broadcast(ROUND_THETA_OS, theta_os)
        self.debug_logger.log_stage("one_step", {'theta_os': theta_os, 'g_cq': g_cq})
        return theta_os, g_cq

    def stage_quasi_newton(self, theta_cq: np.ndarray, theta_os: np.ndarray,
                           g_cq_hat: np.ndarray) -> Tuple[np.ndarray, BfgsState]:
        """BFGS-corrected second Newton step; returns (theta_qn, BFGS state)."""
        model = self.model
        step = theta_os - theta_cq
        s4 = self._plan(NormFactors(s4=float(np.linalg.norm(step)))).require('s4')

        diffs = self.cluster.run_round(
            ROUND_GRAD_DIFF,
            lambda mc: model.gradient(mc.shard, theta_os) - model.gradient(mc.shard, theta_cq),
            s4, include_center=self.include_center,
        )
        self._record(ROUND_GRAD_DIFF, np.full(diffs.shape[0], s4))

        variances = None
        if self.robust:
            variances = gradient_difference_variance(model, self.central_data, theta_os,
                                                     theta_cq, self.n, s4)
        gdiff = self._aggregate(diffs, variances)
        g_os = g_cq_hat + gdiff
        self.cluster.broadcast(ROUND_GRAD_DIFF_HAT, np.concatenate([gdiff, g_os]))

        if not self._local_hinv:
            self._local_hinv = self._local_hinv_at(theta_cq)
        _, bfgs = bfgs_inverse_update(np.eye(self.p), step, gdiff, self.cfg.curvature_floor)
        self.flags['bfgs_skipped'] = not bfgs.applied

        h3_honest = {j: h3_vector(H, bfgs, g_os) for j, H in self._local_hinv.items()}
        s5_norms = np.zeros(self.cluster.m + 1)
        for j, H in self._local_hinv.items():
            s5_norms[j] = (np.linalg.norm(bfgs.V1 @ H, ord=2)
                           * np.linalg.norm(H @ (bfgs.V1 @ g_os)))
        s5 = self._plan(NormFactors(s5=s5_norms)).require('s5_by_machine')

        h3_rows = self.cluster.emit_round(ROUND_H3, h3_honest, s5,
                                          include_center=self.include_center)
        self._record(ROUND_H3, np.array([s5[mc.id] for mc in self._participants()]))

        # the center adds the rank-one part it can compute alone
        h2_rows = h3_rows + center_term(bfgs, g_os)
        variances = None
        if self.robust:
            variances = h3_entry_variance(model, self.central_data, theta_cq, bfgs.V1, g_os,
                                          self.n, float(s5[0]))
        H2 = self._aggregate(h2_rows, variances)
        theta_qn = theta_os - H2

        self.debug_logger.log_stage("quasi_newton", {'theta_qn': theta_qn,
                                                     'bfgs_applied': bfgs.applied})
        return theta_qn, bfgs

    def run(self) -> StageEstimates:
        """Chain the three stages."""
        start = time.time()
        variant = "standard" if self.robust else "unreliable-center"
        self.debug_logger.log_separator(f"Protocol run ({variant})")

        theta_cq, _ = self.stage_initial()
        theta_os, g_cq = self.stage_one_step(theta_cq)
        theta_qn, bfgs = self.stage_quasi_newton(theta_cq, theta_os, g_cq)

        estimates = StageEstimates(
            theta_cq=theta_cq,
            theta_os=theta_os,
            theta_qn=theta_qn,
            transcript=self.cluster.transcript,
            ledger=self.ledger,
            bfgs=bfgs,
            flags=self.flags,
            variant=variant,
            elapsed=time.time() - start,
        )
        for name, value in (('cq', theta_cq), ('os', theta_os), ('qn', theta_qn)):
            if not np.all(np.isfinite(value)):
                raise ProtocolError(f"non-finite {name} estimate")
        return estimates


def run_algorithm1(cluster: Cluster, model: BaseLossModel,
                   cfg: Optional[ProtocolConfig] = None,
                   privacy: Optional[PrivacyParams] = None) -> StageEstimates:
    """Full DCQ-based protocol with the center participating in every aggregation."""
    if cluster.center.shard is None:
        raise ConfigError("the standard protocol needs a data shard on the central processor")
    return QuasiNewtonProtocol(cluster, model, cfg, privacy, robust=True).run()


def run_unreliable_center(cluster: Cluster, model: BaseLossModel,
                          cfg: Optional[ProtocolConfig] = None,
                          privacy: Optional[PrivacyParams] = None) -> StageEstimates:
    """
    Median-based protocol for a central processor without trusted data.

    Only the gradient aggregation keeps the DCQ, scaled by the median of the
    nodes' privatized gradient variances.
    """
    if cluster.center.shard is not None:
        raise ConfigError("the unreliable-center variant expects a center without a shard")
    return QuasiNewtonProtocol(cluster, model, cfg, privacy, robust=False).run()


def run_naive_average(cluster: Cluster, model: BaseLossModel,
                      cfg: Optional[ProtocolConfig] = None,
                      privacy: Optional[PrivacyParams] = None) -> np.ndarray:
    """Mean of the privatized local estimators: the one-round non-robust baseline."""
    cfg = cfg or ProtocolConfig()
    include_center = cluster.center.shard is not None
    solver = cfg.solver
    results = cluster.map(lambda mc: local_m_estimate(model, mc.shard, None, solver).theta,
                          include_center=include_center)
    s1 = 0.0
    if cfg.dp_enabled:
        if privacy is None:
            raise ConfigError("privacy parameters are required when DP is enabled")
        s1 = noise_plan(privacy, model.p, cluster.n, tail=cfg.tail).s1
    thetas = cluster.emit_round(ROUND_NAIVE, results, s1, include_center=include_center)
    return thetas.mean(axis=0)
