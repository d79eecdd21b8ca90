"""Experiment drivers: synthetic replications, MNIST classifiers and audit tables."""

from .dcq_demo import EfficiencyReport, efficiency_monte_carlo
from .mnist import (
    IdxImages,
    MnistConfig,
    PairDataset,
    accuracy,
    find_mnist_files,
    global_accuracy,
    load_idx,
    preprocess_pair,
    train_eval_pair,
    write_idx,
)
from .privacy_audit import PrivacyAudit, privacy_audit, write_audit_csv
from .replication import (
    ESTIMATORS,
    ExperimentConfig,
    MrseReport,
    MrseRow,
    default_grid,
    point_config,
    run_replications,
    run_single,
)
from .reporting import emit_svg, read_csv, write_csv
from .synthetic import gen_logistic, gen_poisson, gen_quadratic, generate, true_theta

__all__ = [
    'ESTIMATORS',
    'EfficiencyReport',
    'ExperimentConfig',
    'IdxImages',
    'MnistConfig',
    'MrseReport',
    'MrseRow',
    'PairDataset',
    'PrivacyAudit',
    'accuracy',
    'default_grid',
    'efficiency_monte_carlo',
    'emit_svg',
    'find_mnist_files',
    'gen_logistic',
    'gen_poisson',
    'gen_quadratic',
    'generate',
    'global_accuracy',
    'load_idx',
    'point_config',
    'preprocess_pair',
    'privacy_audit',
    'read_csv',
    'run_replications',
    'run_single',
    'train_eval_pair',
    'true_theta',
    'write_audit_csv',
    'write_csv',
    'write_idx',
]
