"""
Simulated cluster: machines, data shards, Byzantine attacks and the message transcript.

Machine 0 is the central processor; machines 1..m are node machines. Every
round is a barrier: per-machine computations run (optionally in a thread
pool), then the cluster emits their privatized messages in machine-id order,
so the transcript has a single writer and is reproducible byte for byte.
"""

import csv
import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, TypeVar, Union

import numpy as np

from .exceptions import ConfigError, DimensionMismatchError, ProtocolError
from .models import Dataset
from .privacy import add_gaussian_noise
from .utils import DebugLogger, derive_seed, make_rng

logger = logging.getLogger(__name__)

T = TypeVar('T')

TRANSCRIPT_COLUMNS = ['round', 'machine', 'role', 'payload_norm', 'noise_s']


class AttackKind(str, Enum):
    NONE = "none"
    SCALE = "scale"
    REPLACE = "replace"


@dataclass(frozen=True)
class Attack:
    """Transformation a Byzantine machine applies to every outgoing statistic."""

    kind: AttackKind = AttackKind.NONE
    factor: float = 1.0
    vector: Optional[np.ndarray] = None

    @classmethod
    def scale(cls, factor: float) -> "Attack":
        return cls(AttackKind.SCALE, factor=float(factor))

    @classmethod
    def replace(cls, vector: Sequence[float]) -> "Attack":
        return cls(AttackKind.REPLACE, vector=np.asarray(vector, dtype=float))

    def apply(self, value: np.ndarray) -> np.ndarray:
        if self.kind is AttackKind.SCALE:
            return self.factor * value
        if self.kind is AttackKind.REPLACE:
            if self.vector.shape != value.shape:
                # a replacement shorter than the message is tiled over it
                return np.resize(self.vector, value.shape)
            return self.vector.copy()
        return value


class Role(str, Enum):
    HONEST = "honest"
    BYZANTINE = "byzantine"


@dataclass
class Machine:
    id: int
    shard: Optional[Dataset]
    attack: Attack = field(default_factory=Attack)
    seed: int = 0

    @property
    def role(self) -> Role:
        return Role.HONEST if self.attack.kind is AttackKind.NONE else Role.BYZANTINE

    @property
    def is_center(self) -> bool:
        return self.id == 0


class Direction(str, Enum):
    UPLOAD = "up"
    BROADCAST = "down"


@dataclass
class TranscriptRecord:
    round_label: str
    machine: int
    role: str
    payload: np.ndarray
    noise_s: float
    direction: Direction


class Transcript:
    """Ordered log of every vector exchanged during a protocol run."""

    def __init__(self):
        self.records: List[TranscriptRecord] = []
        self.bytes_sent = 0
        self.bytes_broadcast = 0
        self._collected: List[str] = []
        self._broadcasts: List[str] = []

    def add(self, record: TranscriptRecord) -> None:
        self.records.append(record)

    def payloads(self, round_label: str) -> Dict[int, np.ndarray]:
        return {r.machine: r.payload for r in self.records
                if r.round_label == round_label and r.direction is Direction.UPLOAD}

    def mark_collected(self, round_label: str, rows: int, p: int) -> None:
        self._collected.append(round_label)
        self.bytes_sent += rows * p * 8

    def mark_broadcast(self, round_label: str, p: int, receivers: int) -> None:
        self._broadcasts.append(round_label)
        self.bytes_broadcast += receivers * p * 8

    @property
    def upload_rounds(self) -> List[str]:
        return list(self._collected)

    @property
    def broadcast_rounds(self) -> List[str]:
        return list(self._broadcasts)

    def rows(self) -> List[Dict[str, object]]:
        return [{
            'round': r.round_label,
            'machine': r.machine,
            'role': r.role,
            'payload_norm': float(np.linalg.norm(r.payload)),
            'noise_s': float(r.noise_s),
        } for r in self.records]

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=TRANSCRIPT_COLUMNS, lineterminator='\n')
            writer.writeheader()
            writer.writerows(self.rows())
        return path

    def fingerprint(self) -> str:
        """SHA-256 over labels, machine ids, noise scales and raw payload bytes."""
        digest = hashlib.sha256()
        for r in self.records:
            digest.update(f"{r.round_label}|{r.machine}|{r.direction.value}|{r.noise_s!r}|".encode())
            digest.update(np.ascontiguousarray(r.payload, dtype=float).tobytes())
        return digest.hexdigest()


def shard_data(full: Dataset, m_plus_1: int, seed: int) -> List[Dataset]:
    """
    Split ``full`` into ``m_plus_1`` disjoint shards of equal size.

    Samples beyond ``n * m_plus_1`` are dropped with a warning; the kept
    samples are permuted with ``seed`` before splitting.
    """
    N = full.n
    if m_plus_1 < 1:
        raise ConfigError(f"need at least one machine, got {m_plus_1}")
    if N < m_plus_1:
        raise DimensionMismatchError(f"{N} samples cannot fill {m_plus_1} machines")

    n = N // m_plus_1
    kept = n * m_plus_1
    if kept < N:
        logger.warning(f"Dropping {N - kept} samples so {m_plus_1} machines get {n} each")

    order = np.random.default_rng(derive_seed(seed, 'shard')).permutation(kept)
    return [full.take(order[j * n:(j + 1) * n]) for j in range(m_plus_1)]


def assign_byzantine(m: int, alpha: float, seed: int, count: Optional[int] = None) -> List[int]:
    """
    First floor(alpha * m) node ids (1..m) of a seeded shuffle, sorted.

    An explicit ``count`` replaces the floor rule.
    """
    if not 0 <= alpha < 1:
        raise ConfigError(f"Byzantine fraction must lie in [0, 1), got {alpha}")
    if count is None:
        count = int(math.floor(alpha * m + 1e-9))
    if not 0 <= count <= m:
        raise ConfigError(f"cannot make {count} of {m} node machines Byzantine")
    shuffled = np.random.default_rng(derive_seed(seed, 'byzantine')).permutation(np.arange(1, m + 1))
    return sorted(int(j) for j in shuffled[:count])


class Cluster:
    """A central processor and m node machines with a shared transcript."""

    def __init__(self, machines: List[Machine], parallel_machines: int = 1):
        if not machines or machines[0].id != 0:
            raise ConfigError("machine list must start with the central processor (id 0)")
        self.machines = machines
        self.parallel_machines = max(1, int(parallel_machines))
        self.transcript = Transcript()
        self.debug_logger = DebugLogger()

    @classmethod
    def build(cls, data: Dataset, m: int, alpha: float = 0.0, attack: Optional[Attack] = None,
              seed: int = 0, center_holds_data: bool = True,
              parallel_machines: int = 1, byzantine_count: Optional[int] = None) -> "Cluster":
        """
        Shard ``data`` and assign roles.

        With ``center_holds_data=False`` the data is split over the m node
        machines only and machine 0 has no shard.
        """
        if m < 1:
            raise ConfigError(f"need at least one node machine, got m={m}")
        attack = attack or Attack.scale(-3.0)
        holders = m + 1 if center_holds_data else m
        shards = shard_data(data, holders, seed)
        if not center_holds_data:
            shards = [None] + shards

        byzantine = set(assign_byzantine(m, alpha, seed, byzantine_count))
        machines = [
            Machine(
                id=j,
                shard=shards[j],
                attack=attack if j in byzantine else Attack(),
                seed=derive_seed(seed, 'machine', j),
            )
            for j in range(m + 1)
        ]
        logger.debug(f"Built cluster: m={m}, n={shards[1].n}, byzantine={sorted(byzantine)}")
        return cls(machines, parallel_machines=parallel_machines)

    @property
    def m(self) -> int:
        return len(self.machines) - 1

    @property
    def center(self) -> Machine:
        return self.machines[0]

    @property
    def n(self) -> int:
        """Local sample size (shard size of node machine 1)."""
        return self.machines[1].shard.n

    @property
    def byzantine_ids(self) -> List[int]:
        return [mc.id for mc in self.machines if mc.role is Role.BYZANTINE]

    def participants(self, include_center: bool = True) -> List[Machine]:
        return self.machines if include_center else self.machines[1:]

    def rng_for(self, machine: Machine, round_label: str) -> np.random.Generator:
        """Independent noise stream for (machine, round)."""
        return make_rng(machine.seed, round_label)

    def map(self, fn: Callable[[Machine], T], include_center: bool = True) -> Dict[int, T]:
        """Run a pure per-machine computation, in parallel when configured."""
        machines = self.participants(include_center)
        if self.parallel_machines == 1:
            return {mc.id: fn(mc) for mc in machines}

        results: Dict[int, T] = {}
        with ThreadPoolExecutor(max_workers=self.parallel_machines) as executor:
            future_to_id = {executor.submit(fn, mc): mc.id for mc in machines}
            for future in as_completed(future_to_id):
                results[future_to_id[future]] = future.result()
        return dict(sorted(results.items()))

    def emit(self, machine: Machine, round_label: str, honest_value: np.ndarray,
             noise_s: float) -> np.ndarray:
        """Privatize ``honest_value`` with N(0, noise_s^2), then apply the machine's attack."""
        noised = add_gaussian_noise(honest_value, noise_s, self.rng_for(machine, round_label))
        payload = machine.attack.apply(noised)
        self.transcript.add(TranscriptRecord(round_label, machine.id, machine.role.value,
                                             payload, float(noise_s), Direction.UPLOAD))
        return payload

    def collect(self, round_label: str, include_center: bool = True) -> np.ndarray:
        """Stack the round's payloads in machine-id order."""
        payloads = self.transcript.payloads(round_label)
        ids = [mc.id for mc in self.participants(include_center)]
        missing = [j for j in ids if j not in payloads]
        if missing:
            raise ProtocolError(f"round '{round_label}' has no message from machines {missing}")
        matrix = np.vstack([payloads[j] for j in ids])
        self.transcript.mark_collected(round_label, matrix.shape[0], matrix.shape[1])
        self.debug_logger.log_round(round_label, matrix.shape[0],
                                    bytes_sent=self.transcript.bytes_sent)
        return matrix

    def broadcast(self, round_label: str, value: np.ndarray) -> np.ndarray:
        """Record a center-to-node message; node machines all receive the same vector."""
        value = np.asarray(value, dtype=float)
        self.transcript.add(TranscriptRecord(round_label, 0, 'broadcast', value.copy(), 0.0,
                                             Direction.BROADCAST))
        self.transcript.mark_broadcast(round_label, value.size, self.m)
        return value

    def run_round(self, round_label: str, compute: Callable[[Machine], np.ndarray],
                  noise_scales: Union[float, Sequence[float], np.ndarray],
                  include_center: bool = True) -> np.ndarray:
        """
        One node-to-center round: compute, privatize, attack, collect.

        ``noise_scales`` is either one scale for every machine or one per
        machine id (length m+1).
        """
        honest = self.map(compute, include_center)
        return self.emit_round(round_label, honest, noise_scales, include_center)

    def emit_round(self, round_label: str, honest: Dict[int, np.ndarray],
                   noise_scales: Union[float, Sequence[float], np.ndarray],
                   include_center: bool = True) -> np.ndarray:
        """Emit precomputed honest statistics in machine-id order and collect them."""
        scales = np.asarray(noise_scales, dtype=float)
        for mc in self.participants(include_center):
            s = float(scales) if scales.ndim == 0 else float(scales[mc.id])
            self.emit(mc, round_label, np.asarray(honest[mc.id], dtype=float), s)
        return self.collect(round_label, include_center)
