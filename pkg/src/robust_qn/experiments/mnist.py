"""
MNIST digit-pair classifiers.

The IDX container is big-endian: a 32-bit magic whose low byte is the number
of dimensions, one 32-bit size per dimension, then unsigned-byte payload.
Files may be gzipped. Images use magic 0x00000803, labels 0x00000801.
"""

import gzip
import logging
import math
import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..cluster import Attack, Cluster
from ..exceptions import ConfigError, IdxFormatError, InvalidDataError
from ..models import Dataset, LogisticModel, local_m_estimate
from ..orchestrator import UPLOAD_ROUNDS, ProtocolConfig, run_algorithm1, run_unreliable_center
from ..privacy import MeanDist, PrivacyParams
from ..utils import derive_seed

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
TRAIN_SIZE = 11760
ZERO_FRACTION = 0.75

IMAGES_FILE = 'train-images-idx3-ubyte'
LABELS_FILE = 'train-labels-idx1-ubyte'


@dataclass
class IdxImages:
    magic: int
    dims: List[int]
    pixels: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.dims[0])

    @property
    def flat(self) -> np.ndarray:
        """Images as an (count, rows*cols) matrix."""
        return self.pixels.reshape(len(self), -1)


def _read_bytes(path: Union[str, Path]) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"IDX file not found: {path}")
    opener = gzip.open if path.suffix == '.gz' else open
    with opener(path, 'rb') as f:
        return f.read()


def _parse_idx(raw: bytes, expected_magic: int, path: Union[str, Path]) -> Tuple[List[int], np.ndarray]:
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack('>I', raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header")
    dims = list(struct.unpack(f'>{ndim}I', raw[4:header]))
    expected = math.prod(dims)
    payload = len(raw) - header
    if payload != expected:
        raise IdxFormatError(f"{path}: {payload} payload bytes, dims {dims} need {expected}")
    return dims, np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path]) -> IdxImages:
    """Read an images/labels IDX pair (plain or ``.gz``)."""
    dims, pixels = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, images_path)
    _, labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, labels_path)
    if labels.shape[0] != dims[0]:
        raise IdxFormatError(f"{labels.shape[0]} labels for {dims[0]} images")
    logger.info(f"Loaded {dims[0]} images of shape {dims[1:]} from {images_path}")
    return IdxImages(magic=IMAGES_MAGIC, dims=dims, pixels=pixels, labels=labels)


def write_idx(path: Union[str, Path], array: np.ndarray) -> Path:
    """Write an unsigned-byte array as IDX (images when 3-D, labels when 1-D)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = struct.pack('>I', 0x00000800 | array.ndim) + struct.pack(f'>{array.ndim}I', *array.shape)
    opener = gzip.open if path.suffix == '.gz' else open
    with opener(path, 'wb') as f:
        f.write(header + array.tobytes())
    return path


@dataclass
class PairDataset:
    """Standardized train/test split of a two-digit classification problem."""

    digits: Tuple[int, int]
    train: Dataset
    test: Dataset
    columns: np.ndarray
    mean: np.ndarray = field(repr=False)
    scale: np.ndarray = field(repr=False)

    @property
    def p(self) -> int:
        return self.train.covariates.shape[1]


def preprocess_pair(images: IdxImages, digit_a: int, digit_b: int,
                    feature_list: Optional[Sequence[int]] = None,
                    train_size: Optional[int] = TRAIN_SIZE,
                    train_fraction: Optional[float] = None,
                    seed: int = 0) -> PairDataset:
    """
    Restrict to two digits, split, drop zero-heavy pixels and standardize.

    Label 1 marks ``digit_b``. Columns with at least 75% zeros on the
    training split are dropped and the rest standardized with training
    moments; ``feature_list`` then indexes into the kept columns.
    ``train_fraction`` overrides ``train_size``; the test set is the rest of
    the two-digit pool.
    """
    for d in (digit_a, digit_b):
        if not 0 <= int(d) <= 9:
            raise ConfigError(f"digits must lie in 0..9, got {d}")
    if digit_a == digit_b:
        raise ConfigError("the two digits must differ")

    keep = (images.labels == digit_a) | (images.labels == digit_b)
    for d in (digit_a, digit_b):
        if not np.any(images.labels == d):
            raise InvalidDataError(f"no images of digit {d}")
    X = images.flat[keep].astype(float)
    y = (images.labels[keep] == digit_b).astype(float)

    pool = X.shape[0]
    if train_fraction is not None:
        if not 0 < train_fraction < 1:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
        train_size = int(round(train_fraction * pool))
    if train_size is None or not 0 < train_size < pool:
        raise ConfigError(f"train_size must lie in (0, {pool}), got {train_size}")

    order = np.random.default_rng(derive_seed(seed, 'pair-split')).permutation(pool)
    train_idx, test_idx = order[:train_size], order[train_size:]
    X_train, X_test = X[train_idx], X[test_idx]

    zero_share = np.mean(X_train == 0, axis=0)
    columns = np.flatnonzero(zero_share < ZERO_FRACTION)
    mean = X_train[:, columns].mean(axis=0)
    scale = X_train[:, columns].std(axis=0)
    constant = scale == 0
    if np.any(constant):
        logger.debug(f"Dropping {int(constant.sum())} constant columns")
        columns, mean, scale = columns[~constant], mean[~constant], scale[~constant]

    if feature_list is not None:
        picked = np.asarray(list(feature_list), dtype=int)
        if picked.size == 0 or picked.min() < 0 or picked.max() >= columns.size:
            raise ConfigError(f"feature indices must lie in 0..{columns.size - 1}")
        columns, mean, scale = columns[picked], mean[picked], scale[picked]

    def standardize(rows: np.ndarray) -> np.ndarray:
        return (rows[:, columns] - mean) / scale

    logger.info(f"Digits {digit_a} vs {digit_b}: {train_size} train, {pool - train_size} test, "
                f"{columns.size} features")
    return PairDataset(
        digits=(int(digit_a), int(digit_b)),
        train=Dataset(standardize(X_train), y[train_idx]),
        test=Dataset(standardize(X_test), y[test_idx]),
        columns=columns,
        mean=mean,
        scale=scale,
    )


@dataclass
class MnistConfig:
    """
    Settings of one pair classifier run.

    ``m`` counts the machines holding training data: the center and the
    nodes in the standard variant, the nodes alone when the center is
    unreliable.
    """

    m: int = 10
    alpha_byz: float = 0.1
    attack_scale: float = 3.0
    K: int = 10
    epsilon_total: float = 30.0
    delta_total: float = 0.05
    gammas: Tuple[float, ...] = (0.5,) * 6
    lambda_s: float = 1.0
    tail: str = MeanDist.SUB_EXPONENTIAL.value
    dp_enabled: bool = True
    variant: str = 'standard'
    seed: int = 2024

    def __post_init__(self):
        if self.variant not in UPLOAD_ROUNDS:
            raise ConfigError(f"variant must be one of {tuple(UPLOAD_ROUNDS)}, got {self.variant!r}")
        if self.m < self.min_machines:
            raise ConfigError(f"the {self.variant} variant needs m >= {self.min_machines}, got {self.m}")
        if not 0 <= self.alpha_byz < 0.5:
            raise ConfigError(f"alpha_byz must lie in [0, 0.5), got {self.alpha_byz}")
        self.gammas = tuple(float(g) for g in self.gammas)
        self.tail = MeanDist(self.tail).value
        if self.lambda_s is None:
            self.lambda_s = 1.0

    @classmethod
    def from_settings(cls, settings: Mapping[str, Any]) -> "MnistConfig":
        """
        Build from experiment-file settings.

        ``m`` there counts node machines, as in the synthetic runs, and is
        converted to data-holding machines. ``master_seed`` becomes ``seed``;
        keys with no meaning for a pair classifier are ignored.
        """
        names = {f.name for f in fields(cls)}
        values = {k: v for k, v in settings.items() if k in names and k != 'm'}
        if 'master_seed' in settings:
            values['seed'] = int(settings['master_seed'])
        variant = values.get('variant', cls.variant)
        if 'm' in settings:
            values['m'] = int(settings['m']) + (1 if variant == 'standard' else 0)
        skipped = sorted(set(settings) - names - {'master_seed'})
        if skipped:
            logger.debug(f"Settings unused by the MNIST run: {', '.join(skipped)}")
        return cls(**values)

    @property
    def center_holds_data(self) -> bool:
        return self.variant == 'standard'

    @property
    def min_machines(self) -> int:
        return 2 if self.center_holds_data else 1

    @property
    def nodes(self) -> int:
        return self.m - 1 if self.center_holds_data else self.m

    @property
    def byzantine_count(self) -> int:
        return int(math.floor(self.alpha_byz * self.m + 1e-9))

    def privacy(self) -> Optional[PrivacyParams]:
        if not self.dp_enabled:
            return None
        return PrivacyParams.per_round(self.epsilon_total, self.delta_total,
                                       rounds=UPLOAD_ROUNDS[self.variant],
                                       gammas=self.gammas, lambda_s=self.lambda_s)


def accuracy(theta: np.ndarray, data: Dataset) -> float:
    """Share of rows classified correctly by sigmoid(x'theta) > 1/2."""
    proba = LogisticModel(theta.shape[0]).predict_proba(data.covariates, theta)
    return float(np.mean((proba > 0.5) == (data.responses == 1.0)))


def train_eval_pair(pair: PairDataset, cfg: Optional[MnistConfig] = None,
                    protocol: Optional[ProtocolConfig] = None) -> float:
    """Fit by the quasi-Newton protocol on the training shards, return test accuracy."""
    cfg = cfg or MnistConfig()
    protocol = replace(protocol or ProtocolConfig(), K=cfg.K, dp_enabled=cfg.dp_enabled,
                       tail=cfg.tail)
    cluster = Cluster.build(pair.train, cfg.nodes, cfg.alpha_byz, Attack.scale(cfg.attack_scale),
                            seed=cfg.seed, center_holds_data=cfg.center_holds_data,
                            parallel_machines=protocol.parallel_machines,
                            byzantine_count=cfg.byzantine_count)
    runner = run_algorithm1 if cfg.center_holds_data else run_unreliable_center
    estimates = runner(cluster, LogisticModel(pair.p), protocol, cfg.privacy())
    score = accuracy(estimates.theta_qn, pair.test)
    logger.info(f"Digits {pair.digits} ({cfg.variant}): m={cfg.m}, n={cluster.n}, "
                f"byzantine={cluster.byzantine_ids}, accuracy={score:.4f}")
    return score


def global_accuracy(pair: PairDataset) -> float:
    """Test accuracy of the pooled, noise-free logistic fit."""
    result = local_m_estimate(LogisticModel(pair.p), pair.train)
    if not result.converged:
        logger.warning(f"Pooled fit for digits {pair.digits} did not converge")
    return accuracy(result.theta, pair.test)


def find_mnist_files(directory: Union[str, Path]) -> Optional[Tuple[Path, Path]]:
    """Locate the training images/labels in ``directory``, plain or gzipped."""
    directory = Path(directory)
    for suffix in ('', '.gz'):
        images = directory / f"{IMAGES_FILE}{suffix}"
        labels = directory / f"{LABELS_FILE}{suffix}"
        if images.exists() and labels.exists():
            return images, labels
    return None
