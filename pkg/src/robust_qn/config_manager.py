"""
Configuration management for the robust quasi-Newton simulator.

Two configuration sources exist:

* the framework YAML file (logging, protocol knobs, experiment defaults, output
  directory) handled by :class:`ConfigManager`;
* plain ``key=value`` experiment files passed with ``--config``, parsed by
  :func:`load_experiment_file`.
"""

import copy
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

import yaml

from .exceptions import ConfigError

logger = logging.getLogger(__name__)


EXPERIMENT_DEFAULTS: Dict[str, Any] = {
    'model': 'logistic',
    'p': 10,
    'm': 100,
    'n': 500,
    'alpha_byz': 0.1,
    'attack_scale': -3.0,
    'K': 10,
    'epsilon_total': 30.0,
    'delta_total': 0.05,
    'delta_tilde': 0.01,
    'gammas': [2.0, 2.0, 2.0, 2.0, 2.0, 2.0],
    'lambda_s': None,
    'tail': 'sub_exponential',
    'reps': 100,
    'master_seed': 2024,
    'dp_enabled': True,
    'variant': 'standard',
    'workers': 1,
}

DEFAULT_CONFIG: Dict[str, Any] = {
    'logging': {
        'level': 'INFO',
        'console': {
            'enabled': True,
            'colored': False,
            'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        },
        'file': {
            'enabled': False,
            'path': './logs',
            'filename': 'robust_qn.log',
            'max_size_mb': 10,
            'max_files': 5,
        },
        'debug': {
            'enabled': False,
            'verbose': False,
            'log_rounds': True,
            'log_stages': True,
            'debug_file': {
                'enabled': True,
                'path': './logs/debug',
                'max_size_mb': 20,
                'max_files': 10,
            },
        },
    },
    'protocol': {
        'K': 10,
        'parallel_machines': 1,
        'curvature_floor': 1e-12,
        'max_failed_fraction': 0.5,
        'solver': {
            'tol': 1e-8,
            'max_iter': 100,
            'damping': 0.5,
            'max_norm': 1e4,
        },
    },
    'experiment': copy.deepcopy(EXPERIMENT_DEFAULTS),
    'output': {
        'directory': './results',
    },
}

# environment variable -> dotted config key
ENV_OVERRIDES = {
    'ROBUST_QN_LOG_LEVEL': 'logging.level',
    'ROBUST_QN_SEED': 'experiment.master_seed',
    'ROBUST_QN_OUT': 'output.directory',
    'ROBUST_QN_WORKERS': 'experiment.workers',
}


class ConfigManager:
    """Manages configuration loading and access for the simulator."""

    def __init__(self, config_path: Optional[str] = None):
        """
        Initialize the configuration manager.

        Args:
            config_path: Optional path to config file. If None, searches for config.yaml
                        in standard locations and falls back to built-in defaults.
        """
        self.config_path = self._find_config_file(config_path)
        self.config = self._load_config()

    def _find_config_file(self, config_path: Optional[str] = None) -> Optional[Path]:
        """
        Find the configuration file.

        Args:
            config_path: Optional explicit path to config file

        Returns:
            Path to the configuration file, or None when only defaults apply

        Raises:
            FileNotFoundError: If an explicit path was given and does not exist
        """
        if config_path:
            path = Path(config_path)
            if path.exists():
                return path
            raise FileNotFoundError(f"Config file not found: {config_path}")

        search_paths = [
            Path.cwd() / "config" / "config.yaml",
            Path.cwd() / "config.yaml",
            Path(__file__).parent.parent.parent / "config" / "config.yaml",
            Path.home() / ".robust-qn" / "config.yaml",
        ]

        for path in search_paths:
            if path.exists():
                return path

        logger.debug("No config.yaml found, using built-in defaults")
        return None

    def _load_config(self) -> Dict[str, Any]:
        """
        Load configuration from YAML file merged over the defaults.

        Returns:
            Configuration dictionary
        """
        config = copy.deepcopy(DEFAULT_CONFIG)

        if self.config_path is not None:
            with open(self.config_path, 'r') as f:
                loaded = yaml.safe_load(f) or {}
            if not isinstance(loaded, dict):
                raise ConfigError(f"Top level of {self.config_path} must be a mapping")
            _deep_merge(config, loaded)

        self._apply_env_overrides(config)
        self._validate_config(config)

        return config

    def _apply_env_overrides(self, config: Dict[str, Any]) -> None:
        """
        Apply environment variable overrides to configuration.

        Args:
            config: Configuration dictionary to modify in place
        """
        for env_name, dotted in ENV_OVERRIDES.items():
            if env_name not in os.environ:
                continue
            section, key = dotted.split('.')
            config.setdefault(section, {})[key] = _coerce(os.environ[env_name])

    def _validate_config(self, config: Dict[str, Any]) -> None:
        """
        Validate configuration structure.

        Missing or malformed values are replaced with defaults and a warning is
        logged; only values that cannot be repaired raise.
        """
        protocol = config['protocol']

        if not isinstance(protocol.get('K'), int) or protocol['K'] < 1:
            logger.warning(f"Invalid protocol.K={protocol.get('K')!r}, defaulting to 10")
            protocol['K'] = 10

        if int(protocol.get('parallel_machines', 1)) < 1:
            logger.warning("protocol.parallel_machines must be >= 1, defaulting to 1")
            protocol['parallel_machines'] = 1

        solver = protocol.setdefault('solver', {})
        for key, value in DEFAULT_CONFIG['protocol']['solver'].items():
            solver.setdefault(key, value)
        if not 0 < float(solver['damping']) <= 1:
            logger.warning(f"protocol.solver.damping={solver['damping']} outside (0, 1], using 0.5")
            solver['damping'] = 0.5
        if float(solver['tol']) <= 0 or int(solver['max_iter']) < 1:
            raise ConfigError("protocol.solver needs tol > 0 and max_iter >= 1")

        experiment = config['experiment']
        unknown = set(experiment) - set(EXPERIMENT_DEFAULTS)
        for key in sorted(unknown):
            logger.warning(f"Ignoring unknown experiment setting '{key}'")
            experiment.pop(key)

        level = str(config['logging'].get('level', 'INFO')).upper()
        if level not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            logger.warning(f"Unknown log level {level}, defaulting to INFO")
            level = 'INFO'
        config['logging']['level'] = level

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get a configuration value by key.

        Args:
            key: Configuration key (supports dot notation for nested keys)
            default: Default value if key not found

        Returns:
            Configuration value or default
        """
        keys = key.split('.')
        value = self.config

        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default

        return value

    def get_protocol_config(self) -> Dict[str, Any]:
        """Get protocol configuration (K, solver options, parallelism)."""
        return self.config.get('protocol', DEFAULT_CONFIG['protocol'])

    def get_experiment_defaults(self) -> Dict[str, Any]:
        """Get the experiment defaults that ExperimentConfig starts from."""
        return dict(self.config.get('experiment', EXPERIMENT_DEFAULTS))

    def get_output_dir(self) -> Path:
        """Get the results directory."""
        return Path(self.config.get('output', {}).get('directory', './results'))

    def get_logging_config(self) -> Dict[str, Any]:
        """Get logging configuration."""
        return self.config.get('logging', {})

    def get_debug_config(self) -> Dict[str, Any]:
        """Get debug configuration from unified logging section."""
        return self.config.get('logging', {}).get('debug', {})

    def reload(self) -> None:
        """Reload configuration from file."""
        self.config = self._load_config()


def load_experiment_file(path: Union[str, Path],
                         allowed_keys: Optional[Iterable[str]] = None) -> Dict[str, Any]:
    """
    Parse a ``key=value`` experiment file.

    Blank lines and ``#`` comments are skipped. Values go through
    ``yaml.safe_load`` so numbers, booleans and ``[a, b]`` lists get their
    natural types.

    Args:
        path: File to read
        allowed_keys: Accepted keys, defaults to the experiment settings

    Returns:
        Mapping of setting name to parsed value

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: On malformed lines or unknown keys
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Experiment file not found: {path}")

    allowed = set(allowed_keys) if allowed_keys is not None else set(EXPERIMENT_DEFAULTS)
    settings: Dict[str, Any] = {}

    with open(path, 'r') as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split('=', 1))
            if key not in allowed:
                raise ConfigError(f"{path}:{lineno}: unknown setting '{key}'")
            settings[key] = _coerce(value)

    return settings


def _coerce(text: str) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse value {text!r}: {e}") from e


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> None:
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_merge(base[key], value)
        else:
            base[key] = value
