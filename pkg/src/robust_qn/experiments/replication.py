"""
Replication runner: MRSE of every protocol stage over seeded replicates.

Each replicate draws fresh data from the configured generator, runs the
private protocol and, on the same data and shards, the noise-free
quasi-Newton baseline. Replicates are independent and run in a thread pool;
results are sorted back into replicate order before averaging, so the report
does not depend on the number of workers.
"""

import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..cluster import Attack, Cluster
from ..config_manager import EXPERIMENT_DEFAULTS
from ..exceptions import ConfigError, RobustQNError
from ..models import ModelKind, get_model
from ..orchestrator import (
    UPLOAD_ROUNDS,
    ProtocolConfig,
    StageEstimates,
    run_algorithm1,
    run_unreliable_center,
)
from ..privacy import MeanDist, PrivacyParams
from ..utils import DebugLogger, derive_seed
from .synthetic import generate, population_lambda_min

logger = logging.getLogger(__name__)

ESTIMATORS = ('cq', 'os', 'qn', 'qn_nodp')
VARIANTS = tuple(UPLOAD_ROUNDS)
GRID_KINDS = ('epsilon', 'm')


@dataclass
class ExperimentConfig:
    """One experiment's settings; field names double as ``key=value`` file keys."""

    model: str = EXPERIMENT_DEFAULTS['model']
    p: int = EXPERIMENT_DEFAULTS['p']
    m: int = EXPERIMENT_DEFAULTS['m']
    n: int = EXPERIMENT_DEFAULTS['n']
    alpha_byz: float = EXPERIMENT_DEFAULTS['alpha_byz']
    attack_scale: float = EXPERIMENT_DEFAULTS['attack_scale']
    K: int = EXPERIMENT_DEFAULTS['K']
    epsilon_total: float = EXPERIMENT_DEFAULTS['epsilon_total']
    delta_total: float = EXPERIMENT_DEFAULTS['delta_total']
    delta_tilde: float = EXPERIMENT_DEFAULTS['delta_tilde']
    gammas: Tuple[float, ...] = tuple(EXPERIMENT_DEFAULTS['gammas'])
    # None: smallest eigenvalue of the population Hessian at theta*
    lambda_s: Optional[float] = EXPERIMENT_DEFAULTS['lambda_s']
    tail: str = EXPERIMENT_DEFAULTS['tail']
    reps: int = EXPERIMENT_DEFAULTS['reps']
    master_seed: int = EXPERIMENT_DEFAULTS['master_seed']
    dp_enabled: bool = EXPERIMENT_DEFAULTS['dp_enabled']
    variant: str = EXPERIMENT_DEFAULTS['variant']
    workers: int = EXPERIMENT_DEFAULTS['workers']

    def __post_init__(self):
        self.model = ModelKind(str(self.model).lower()).value
        self.gammas = tuple(float(g) for g in self.gammas)
        self.tail = MeanDist(self.tail).value
        if self.p < 1 or self.m < 1 or self.n < 2:
            raise ConfigError(f"need p >= 1, m >= 1, n >= 2 (got p={self.p}, m={self.m}, n={self.n})")
        if not 0 <= self.alpha_byz < 0.5:
            raise ConfigError(f"alpha_byz must lie in [0, 0.5), got {self.alpha_byz}")
        if self.reps < 1:
            raise ConfigError(f"reps must be >= 1, got {self.reps}")
        if self.dp_enabled and self.epsilon_total <= 0:
            raise ConfigError("epsilon_total must be positive when DP is enabled")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.lambda_s is not None:
            self.lambda_s = float(self.lambda_s)
            if self.lambda_s <= 0:
                raise ConfigError(f"lambda_s must be positive, got {self.lambda_s}")

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown experiment settings: {', '.join(sorted(unknown))}")
        return cls(**dict(values))

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @property
    def rounds(self) -> int:
        """Privatized uploads per run: five, plus the gradient variances without a central shard."""
        return UPLOAD_ROUNDS[self.variant]

    def hessian_lower_bound(self) -> float:
        if self.lambda_s is not None:
            return float(self.lambda_s)
        return population_lambda_min(self.model, self.p)

    def privacy(self) -> PrivacyParams:
        """Per-round parameters: the total budget split evenly over the transmitted vectors."""
        return PrivacyParams.per_round(self.epsilon_total, self.delta_total,
                                       rounds=self.rounds, gammas=self.gammas,
                                       lambda_s=self.hessian_lower_bound())

    def protocol(self, base: Optional[ProtocolConfig] = None, dp_enabled: Optional[bool] = None
                 ) -> ProtocolConfig:
        base = base or ProtocolConfig()
        return replace(base, K=self.K, tail=self.tail,
                       dp_enabled=self.dp_enabled if dp_enabled is None else dp_enabled)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out['gammas'] = list(self.gammas)
        return out


@dataclass
class MrseRow:
    estimator: str
    epsilon: float
    m: int
    n: int
    p: int
    alpha: float
    mrse: float
    stderr: float


@dataclass
class MrseReport:
    rows: List[MrseRow] = field(default_factory=list)
    failures: Dict[str, int] = field(default_factory=dict)
    seeds: Dict[int, int] = field(default_factory=dict)
    grid_kind: str = 'epsilon'

    def lookup(self, estimator: str, grid_value: float) -> MrseRow:
        key = 'epsilon' if self.grid_kind == 'epsilon' else 'm'
        for row in self.rows:
            if row.estimator == estimator and math.isclose(getattr(row, key), grid_value):
                return row
        raise KeyError(f"no row for {estimator} at {key}={grid_value}")

    def grid_values(self) -> List[float]:
        key = 'epsilon' if self.grid_kind == 'epsilon' else 'm'
        seen: List[float] = []
        for row in self.rows:
            value = getattr(row, key)
            if value not in seen:
                seen.append(value)
        return seen


@dataclass
class ReplicateResult:
    grid_index: int
    replicate: int
    errors: Optional[Dict[str, float]]
    error: Optional[str] = None


def point_config(cfg: ExperimentConfig, grid_kind: str, value: float) -> ExperimentConfig:
    if grid_kind == 'epsilon':
        return replace(cfg, epsilon_total=float(value))
    return replace(cfg, m=int(value))


def run_single(cfg: ExperimentConfig, seed: int,
               protocol: Optional[ProtocolConfig] = None) -> Tuple[StageEstimates, StageEstimates, np.ndarray]:
    """
    One replicate: generate data, run the private protocol and the noise-free baseline.

    Returns (private estimates, noise-free estimates, theta*).
    """
    center_holds_data = cfg.variant == 'standard'
    machines_with_data = cfg.m + 1 if center_holds_data else cfg.m
    data, theta_star = generate(cfg.model, cfg.p, cfg.n * machines_with_data,
                                derive_seed(seed, 'data'))
    model = get_model(cfg.model, cfg.p)
    runner = run_algorithm1 if center_holds_data else run_unreliable_center
    parallel = protocol.parallel_machines if protocol is not None else 1

    def build() -> Cluster:
        return Cluster.build(data, cfg.m, cfg.alpha_byz, Attack.scale(cfg.attack_scale),
                             seed=seed, center_holds_data=center_holds_data,
                             parallel_machines=parallel)

    privacy = cfg.privacy() if cfg.dp_enabled else None
    private = runner(build(), model, cfg.protocol(protocol), privacy)
    baseline = runner(build(), model, cfg.protocol(protocol, dp_enabled=False), None)
    return private, baseline, theta_star


def run_replications(cfg: ExperimentConfig, grid: Sequence[float], grid_kind: str = 'epsilon',
                     protocol: Optional[ProtocolConfig] = None) -> MrseReport:
    """
    MRSE of theta_cq, theta_os, theta_qn and the noise-free theta_qn over ``cfg.reps`` replicates.

    Replicate ``r`` uses the seed derived from (master_seed, r) at every grid
    point, so grid points are compared on common random numbers.
    """
    if not grid:
        raise ConfigError("grid must contain at least one value")
    if grid_kind not in GRID_KINDS:
        raise ConfigError(f"grid_kind must be one of {GRID_KINDS}, got {grid_kind!r}")

    debug_logger = DebugLogger()
    debug_logger.log_separator(f"Replications over {grid_kind}={list(grid)}")
    seeds = {r: derive_seed(cfg.master_seed, 'replicate', r) for r in range(cfg.reps)}
    progress_lock = threading.Lock()
    done = [0]
    total = len(grid) * cfg.reps
    start = time.time()

    def task(grid_index: int, replicate: int) -> ReplicateResult:
        point = point_config(cfg, grid_kind, grid[grid_index])
        rep_id = f"{grid_kind}={grid[grid_index]}#{replicate}"
        try:
            private, baseline, theta_star = run_single(point, seeds[replicate], protocol)
            errors = private.errors(theta_star)
            errors['qn_nodp'] = baseline.errors(theta_star)['qn']
            debug_logger.log_replicate(rep_id, "COMPLETED", errors)
            result = ReplicateResult(grid_index, replicate, errors)
        except RobustQNError as e:
            logger.warning(f"Replicate {rep_id} failed: {e}")
            debug_logger.log_replicate(rep_id, "FAILED", {'error': str(e)})
            result = ReplicateResult(grid_index, replicate, None, str(e))
        with progress_lock:
            done[0] += 1
            if done[0] % max(1, total // 10) == 0:
                logger.info(f"{done[0]}/{total} replicates finished")
        return result

    jobs = [(g, r) for g in range(len(grid)) for r in range(cfg.reps)]
    results: List[ReplicateResult] = []
    if cfg.workers == 1:
        results = [task(g, r) for g, r in jobs]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
            future_to_job = {executor.submit(task, g, r): (g, r) for g, r in jobs}
            for future in as_completed(future_to_job):
                results.append(future.result())
    results.sort(key=lambda res: (res.grid_index, res.replicate))

    report = MrseReport(seeds=seeds, grid_kind=grid_kind)
    for grid_index, value in enumerate(grid):
        point = point_config(cfg, grid_kind, value)
        ok = [res.errors for res in results if res.grid_index == grid_index and res.errors]
        failed = sum(1 for res in results if res.grid_index == grid_index and res.errors is None)
        if failed:
            report.failures[f"{grid_kind}={value}"] = failed
        for estimator in ESTIMATORS:
            errs = np.array([e[estimator] for e in ok])
            mrse = float(errs.mean()) if errs.size else float('nan')
            stderr = float(errs.std(ddof=1) / math.sqrt(errs.size)) if errs.size > 1 else 0.0
            report.rows.append(MrseRow(estimator, float(point.epsilon_total), int(point.m),
                                       int(point.n), int(point.p), float(point.alpha_byz),
                                       mrse, stderr))

    logger.info(f"Finished {total} replicates in {time.time() - start:.1f}s "
                f"({sum(report.failures.values())} failed)")
    return report


def default_grid(grid_kind: str, cfg: ExperimentConfig) -> List[float]:
    """Grid used when the CLI gives none."""
    if grid_kind == 'epsilon':
        return [4.0, 12.0, 30.0]
    return [float(cfg.m), float(4 * cfg.m)]

