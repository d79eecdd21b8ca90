"""
Robust Quasi-Newton Simulator

Byzantine-robust, differentially private distributed M-estimation: local
estimation, DCQ aggregation, one Newton step and one BFGS step, with Gaussian
noise on every transmitted vector and a privacy ledger.
"""

__version__ = "0.1.0"

from .aggregation import DcqConfig, coord_median, dcq_scalar, dcq_vector, dk_constant
from .cluster import Attack, Cluster
from .config_manager import ConfigManager
from .exceptions import RobustQNError
from .orchestrator import (
    ProtocolConfig,
    StageEstimates,
    run_algorithm1,
    run_naive_average,
    run_unreliable_center,
)
from .privacy import NoisePlan, PrivacyLedger, PrivacyParams, noise_plan

__all__ = [
    "Attack",
    "Cluster",
    "ConfigManager",
    "DcqConfig",
    "NoisePlan",
    "PrivacyLedger",
    "PrivacyParams",
    "ProtocolConfig",
    "RobustQNError",
    "StageEstimates",
    "coord_median",
    "dcq_scalar",
    "dcq_vector",
    "dk_constant",
    "noise_plan",
    "run_algorithm1",
    "run_naive_average",
    "run_unreliable_center",
]
