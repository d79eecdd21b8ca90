"""Utility functions for the robust quasi-Newton simulator."""

import json
import logging
import logging.handlers
import os
import zlib
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

DEFAULT_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
FILE_FORMAT = '%(asctime)s | %(levelname)-8s | %(name)s | %(funcName)s | %(message)s'


def setup_logging(name: str, config: Optional[Dict[str, Any]] = None,
                  level: Optional[str] = None, log_file: Optional[str] = None) -> logging.Logger:
    """
    Set up a logger with consistent formatting using the unified config.

    Args:
        name: Logger name (usually "robust_qn" or __name__)
        config: Configuration dictionary (if provided, overrides other params)
        level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: Optional log file path

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)

    if config and 'logging' in config:
        log_config = config['logging']

        if level is None:
            level = log_config.get('level', 'INFO')

        # Verbose debug mode overrides the level
        if log_config.get('debug', {}).get('enabled', False):
            if log_config.get('debug', {}).get('verbose', False):
                level = 'DEBUG'

    logger.setLevel(getattr(logging, (level or 'INFO').upper()))

    # Remove existing handlers to avoid duplicates
    logger.handlers.clear()

    if config and 'logging' in config:
        console_config = config['logging'].get('console', {})
        if console_config.get('enabled', True):
            console_handler = logging.StreamHandler()
            console_format = console_config.get('format', DEFAULT_FORMAT)

            if console_config.get('colored', False):
                try:
                    import colorlog
                    formatter = colorlog.ColoredFormatter(
                        '%(log_color)s' + console_format,
                        datefmt='%Y-%m-%d %H:%M:%S',
                        log_colors={
                            'DEBUG': 'cyan',
                            'INFO': 'green',
                            'WARNING': 'yellow',
                            'ERROR': 'red',
                            'CRITICAL': 'red,bg_white',
                        }
                    )
                except ImportError:
                    formatter = logging.Formatter(console_format, datefmt='%Y-%m-%d %H:%M:%S')
            else:
                formatter = logging.Formatter(console_format, datefmt='%Y-%m-%d %H:%M:%S')

            console_handler.setFormatter(formatter)
            logger.addHandler(console_handler)
    else:
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(logging.Formatter(DEFAULT_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))
        logger.addHandler(console_handler)

    if config and 'logging' in config:
        file_config = config['logging'].get('file', {})
        if file_config.get('enabled', False):
            log_path = Path(file_config.get('path', './logs'))
            log_path.mkdir(parents=True, exist_ok=True)

            file_handler = logging.handlers.RotatingFileHandler(
                log_path / file_config.get('filename', 'robust_qn.log'),
                maxBytes=file_config.get('max_size_mb', 10) * 1024 * 1024,
                backupCount=file_config.get('max_files', 5)
            )
            file_handler.setFormatter(logging.Formatter(
                file_config.get('format', FILE_FORMAT), datefmt='%Y-%m-%d %H:%M:%S'))
            logger.addHandler(file_handler)
    elif log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(logging.Formatter(DEFAULT_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))
        logger.addHandler(file_handler)

    return logger


def get_env_or_config(key: str, config: dict, default: Any = None) -> Any:
    """
    Get a value from environment variable or config, with environment taking precedence.

    The environment variable name is ``ROBUST_QN_`` followed by the last dotted
    component of ``key`` in upper case, so ``experiment.seed`` maps to
    ``ROBUST_QN_SEED``.

    Args:
        key: Dotted config key
        config: Configuration dictionary
        default: Default value if not found

    Returns:
        Value from environment, config, or default
    """
    env_value = os.environ.get(f"ROBUST_QN_{key.split('.')[-1].upper()}")
    if env_value is not None:
        return env_value

    value: Any = config
    for k in key.lower().split('.'):
        if isinstance(value, dict) and k in value:
            value = value[k]
        else:
            return default

    return value if value is not config else default


def format_time_duration(seconds: float) -> str:
    """
    Format seconds into a human-readable duration string.

    Args:
        seconds: Duration in seconds

    Returns:
        Formatted duration string (e.g., "2m 30s", "1h 15m")
    """
    if seconds < 60:
        return f"{seconds:.1f}s"
    elif seconds < 3600:
        minutes = int(seconds // 60)
        secs = int(seconds % 60)
        return f"{minutes}m {secs}s"
    else:
        hours = int(seconds // 3600)
        minutes = int((seconds % 3600) // 60)
        secs = int(seconds % 60)
        if hours < 24:
            return f"{hours}h {minutes}m {secs}s"
        days = int(hours // 24)
        hours = int(hours % 24)
        return f"{days}d {hours}h {minutes}m"


def label_key(label: str) -> int:
    """Stable 32-bit integer for a round label, used as a seed-spawn key."""
    return zlib.crc32(label.encode('utf-8'))


def derive_seed(master_seed: int, *keys: Union[int, str]) -> int:
    """
    Derive a 64-bit child seed from a master seed and a key path.

    The derivation is keyed rather than sequential, so the child for
    ``(replicate, machine)`` does not depend on how many other children were
    drawn before it.
    """
    spawn_key = tuple(label_key(k) if isinstance(k, str) else int(k) for k in keys)
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=spawn_key)
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def make_rng(seed: int, *keys: Union[int, str]) -> np.random.Generator:
    """Generator for the stream identified by ``seed`` and an optional key path."""
    spawn_key = tuple(label_key(k) if isinstance(k, str) else int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key))


def parse_number_list(text: str, kind: type = float) -> Sequence:
    """Parse a comma separated CLI list such as ``"4,12,30"``."""
    items = [item.strip() for item in text.split(',') if item.strip()]
    return [kind(item) for item in items]


class DebugLogger:
    """Protocol trace logger driven by the ``logging.debug`` config section."""

    _instance = None
    _initialized = False

    def __new__(cls, config: Optional[Dict[str, Any]] = None):
        """Singleton pattern to ensure only one trace logger instance."""
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        """Initialize the trace logger with unified configuration."""
        if self._initialized:
            return

        self.config = config or {}
        self.log_config = self.config.get('logging', {})
        self.debug_config = self.log_config.get('debug', {})
        self.enabled = self.debug_config.get('enabled', False)
        self.verbose = self.debug_config.get('verbose', False)
        self.logger: Optional[logging.Logger] = None

        if self.enabled:
            self._setup_logger()

        self._initialized = True

    @classmethod
    def reset(cls) -> None:
        """Drop the singleton so the next construction re-reads its config."""
        cls._instance = None
        cls._initialized = False

    def _setup_logger(self) -> None:
        """Set up the trace logger with file rotation using unified config."""
        debug_file_config = self.debug_config.get('debug_file', {})

        if not debug_file_config.get('enabled', True):
            return

        log_path = Path(debug_file_config.get('path', './logs/debug'))
        log_path.mkdir(parents=True, exist_ok=True)

        timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
        log_file = log_path / f"trace_{timestamp}.log"

        self.logger = logging.getLogger('robust_qn.trace')
        self.logger.propagate = False

        if self.verbose:
            self.logger.setLevel(logging.DEBUG)
        else:
            self.logger.setLevel(getattr(logging, self.log_config.get('level', 'INFO')))

        self.logger.handlers.clear()

        file_handler = logging.handlers.RotatingFileHandler(
            log_file,
            maxBytes=debug_file_config.get('max_size_mb', 20) * 1024 * 1024,
            backupCount=debug_file_config.get('max_files', 10)
        )
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))
        self.logger.addHandler(file_handler)

        self.logger.info("=" * 80)
        self.logger.info("Protocol trace initialized")
        self.logger.info(f"Log file: {log_file}")
        self.logger.info(f"Debug config: {json.dumps(self.debug_config, indent=2)}")
        self.logger.info("=" * 80)

    def log(self, level: str, message: str, **kwargs) -> None:
        """Log a message if tracing is enabled.

        Args:
            level: Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
            message: Message to log
            **kwargs: Additional key-value pairs appended as JSON
        """
        if not self.enabled or not self.logger:
            return

        if kwargs:
            message = f"{message} | {json.dumps(kwargs, default=_json_default)}"

        log_method = getattr(self.logger, level.lower(), self.logger.info)
        log_method(message)

    def info(self, message: str, **kwargs) -> None:
        self.log('INFO', message, **kwargs)

    def log_round(self, label: str, machines: int, noise_s: Any = None, bytes_sent: int = 0) -> None:
        """Log one collected node-to-center round."""
        if not self.enabled or not self.debug_config.get('log_rounds', True):
            return
        self.info("Round collected", round=label, machines=machines,
                  noise_s=noise_s, bytes_sent=bytes_sent)

    def log_stage(self, stage: str, details: Optional[Dict[str, Any]] = None) -> None:
        """Log a finished protocol stage (initial, one-step, quasi-Newton)."""
        if not self.enabled or not self.debug_config.get('log_stages', True):
            return
        self.info("Stage finished", stage=stage, details=details or {})

    def log_replicate(self, replicate_id: str, status: str,
                      details: Optional[Dict[str, Any]] = None) -> None:
        """Log replicate status in the replication runner."""
        if not self.enabled:
            return
        self.info("Replicate", replicate_id=replicate_id, status=status, details=details or {})

    def log_separator(self, title: Optional[str] = None) -> None:
        """Log a separator line for better readability."""
        if not self.enabled:
            return
        if title:
            self.info(f"{'=' * 30} {title} {'=' * 30}")
        else:
            self.info("=" * 80)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return str(value)
