"""
Configuration Loading

Loads the nested YAML configuration (or a flat ``key = value`` text file),
deep-merges it over the built-in defaults, coerces numeric strings and
range-checks every value.
"""

import copy
import logging
import math
import os
from typing import Any, Callable, Dict, Optional

import yaml

from src.experiments import OptConfig, SynthConfig
from src.losses import BayesianLossConfig, LossWeights


logger = logging.getLogger(__name__)

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')
DENSITY_MODES = ('raw', 'per_dim')

DEFAULTS: Dict[str, Dict[str, Any]] = {
    'evidence': {
        'n_h': None,
        'm_max': 1.0e+6,
        'gmm_k': 20,
        'gmm_max_iters': 200,
        'gmm_tol': 1.0e-6,
        'density_normalization': 'raw',
    },
    'loss': {
        'gamma': 1.0e-3,
        'weights': {
            'lambda_w': 10.0,
            'lambda_c': 0.1,
            'lambda_b': 0.1,
            'lambda_a': 0.1,
            'lambda_z': 0.0001,
            'lambda_rec': 10.0,
        },
    },
    'grasp': {
        't_bins': 12,
        'match_radius': 0.02,
        'top_k': 10,
    },
    'mc': {
        'samples': 100000,
        'seed': 0,
        'chunk_size': 50000,
        'workers': 1,
        'z_threshold': 3.0,
        'pass_fraction': 0.99,
    },
    'synth': {
        'cluster_count': 4,
        'points_per_cluster': 100,
        'true_kappas': [5.0, 20.0, 50.0, 200.0],
        'feature_dim': 8,
        'feature_noise_sigma': 0.3,
        'cluster_spread': 4.0,
        'ood_fraction': 0.2,
        'ood_shift': 10.0,
        'ood_direction_kappa': 1.0,
        'seed': 0,
    },
    'optimization': {
        'step_size': 1.0e-2,
        'iterations': 2000,
        'holdout_fraction': 0.3,
    },
    'logging': {
        'log_level': 'INFO',
        'log_path': None,
    },
}

# Flat keys of the key = value format
FLAT_KEYS = {
    'n_h': [('evidence', 'n_h')],
    'gamma': [('loss', 'gamma')],
    't_bins': [('grasp', 't_bins')],
    'm_max': [('evidence', 'm_max')],
    'gmm_k': [('evidence', 'gmm_k')],
    'seed': [('mc', 'seed'), ('synth', 'seed')],
    'mc_samples': [('mc', 'samples')],
}


class ConfigError(ValueError):
    """Invalid configuration value or key."""


def _int(minimum: int) -> Callable[[str, Any], int]:
    def check(name, value):
        if isinstance(value, bool):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        try:
            as_float = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        if not as_float.is_integer():
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        result = int(as_float)
        if result < minimum:
            raise ConfigError(f"{name} must be >= {minimum}, got {result}")
        return result
    return check


def _float(low: float = -math.inf, high: float = math.inf,
           low_open: bool = False, high_open: bool = False) -> Callable[[str, Any], float]:
    def check(name, value):
        if isinstance(value, bool):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        try:
            result = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        if not math.isfinite(result):
            raise ConfigError(f"{name} must be finite, got {value!r}")
        if result < low or (low_open and result == low):
            raise ConfigError(f"{name} must be {'>' if low_open else '>='} {low}, got {result}")
        if result > high or (high_open and result == high):
            raise ConfigError(f"{name} must be {'<' if high_open else '<='} {high}, got {result}")
        return result
    return check


def _optional(check):
    def wrapped(name, value):
        if value is None or (isinstance(value, str) and value.lower() in ('null', 'none', '')):
            return None
        return check(name, value)
    return wrapped


def _choice(options):
    def check(name, value):
        if value not in options:
            raise ConfigError(f"{name} must be one of {options}, got {value!r}")
        return value
    return check


def _kappa_list(name, value):
    if isinstance(value, str):
        value = [v for v in value.split(',') if v.strip()]
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{name} must be a non-empty list of numbers")
    return [_float(0.0, low_open=True)(name, v) for v in value]


def _path(name, value):
    if value is None:
        return None
    return str(value)


POSITIVE = _float(0.0, low_open=True)
NON_NEGATIVE = _float(0.0)

VALIDATORS: Dict[str, Dict[str, Callable]] = {
    'evidence': {
        'n_h': _optional(POSITIVE),
        'm_max': POSITIVE,
        'gmm_k': _int(1),
        'gmm_max_iters': _int(1),
        'gmm_tol': POSITIVE,
        'density_normalization': _choice(DENSITY_MODES),
    },
    'loss': {
        'gamma': NON_NEGATIVE,
    },
    'grasp': {
        't_bins': _int(2),
        'match_radius': POSITIVE,
        'top_k': _int(1),
    },
    'mc': {
        'samples': _int(100),
        'seed': _int(0),
        'chunk_size': _int(100),
        'workers': _int(1),
        'z_threshold': POSITIVE,
        'pass_fraction': _float(0.0, 1.0),
    },
    'synth': {
        'cluster_count': _int(1),
        'points_per_cluster': _int(1),
        'true_kappas': _kappa_list,
        'feature_dim': _int(1),
        'feature_noise_sigma': NON_NEGATIVE,
        'cluster_spread': NON_NEGATIVE,
        'ood_fraction': _float(0.0, 1.0, high_open=True),
        'ood_shift': NON_NEGATIVE,
        'ood_direction_kappa': POSITIVE,
        'seed': _int(0),
    },
    'optimization': {
        'step_size': POSITIVE,
        'iterations': _int(1),
        'holdout_fraction': _float(0.0, 1.0, low_open=True, high_open=True),
    },
    'logging': {
        'log_level': _choice(LOG_LEVELS),
        'log_path': _path,
    },
}


def _merge_section(section: str, base: Dict[str, Any], override: Any) -> None:
    if not isinstance(override, dict):
        raise ConfigError(f"section '{section}' must be a mapping")
    for key, value in override.items():
        if section == 'loss' and key == 'weights':
            if not isinstance(value, dict):
                raise ConfigError("loss.weights must be a mapping")
            for w_key, w_value in value.items():
                if w_key not in base['weights']:
                    raise ConfigError(f"Unknown config key: loss.weights.{w_key}")
                base['weights'][w_key] = NON_NEGATIVE(f"loss.weights.{w_key}", w_value)
            continue
        if key not in VALIDATORS[section]:
            raise ConfigError(f"Unknown config key: {section}.{key}")
        base[key] = value


def validate_config(raw: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    """Merge a raw mapping over the defaults and validate it.

    Args:
        raw: Nested mapping (sections of keys), may be None

    Returns:
        Complete, validated configuration

    Raises:
        ConfigError: On unknown keys or out-of-range values
    """
    config = copy.deepcopy(DEFAULTS)
    for section, values in (raw or {}).items():
        if section not in DEFAULTS:
            raise ConfigError(f"Unknown config section: {section}")
        if values is None:
            continue
        _merge_section(section, config[section], values)

    for section, validators in VALIDATORS.items():
        for key, check in validators.items():
            config[section][key] = check(f"{section}.{key}", config[section][key])

    synth = config['synth']
    if len(synth['true_kappas']) != synth['cluster_count']:
        raise ConfigError(
            f"synth.true_kappas has {len(synth['true_kappas'])} entries "
            f"for {synth['cluster_count']} clusters"
        )
    return config


def _parse_key_value(text: str, path: str) -> Dict[str, Any]:
    """Parse ``key = value`` lines into the nested layout ('#' starts a comment)."""
    nested: Dict[str, Dict[str, Any]] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
        key, value = (part.strip() for part in line.split('=', 1))
        if key in FLAT_KEYS:
            targets = FLAT_KEYS[key]
        elif key in VALIDATORS['synth']:
            targets = [('synth', key)]
        else:
            raise ConfigError(f"{path}:{line_no}: unknown config key '{key}'")
        for section, name in targets:
            nested.setdefault(section, {})[name] = value
    return nested


def load_config(path: Optional[str] = None) -> Dict[str, Any]:
    """Load and validate a configuration file.

    ``.yaml``/``.yml`` files are nested YAML; any other file is read as flat
    ``key = value`` lines. Without a path the defaults are returned.

    Raises:
        ConfigError: On unreadable or invalid configuration
    """
    if path is None:
        return validate_config(None)
    try:
        with open(path, 'r') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e

    if os.path.splitext(path)[1].lower() in ('.yaml', '.yml'):
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {path}: {e}") from e
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    else:
        raw = _parse_key_value(text, path)

    config = validate_config(raw)
    logger.debug(f"Loaded configuration from {path}")
    return config


def synth_config_from(config: Dict[str, Any], **overrides) -> SynthConfig:
    values = dict(config['synth'])
    values['true_kappas'] = tuple(values['true_kappas'])
    values.update(overrides)
    return SynthConfig(**values)


def opt_config_from(config: Dict[str, Any], **overrides) -> OptConfig:
    evidence = config['evidence']
    values = dict(
        step_size=config['optimization']['step_size'],
        iterations=config['optimization']['iterations'],
        holdout_fraction=config['optimization']['holdout_fraction'],
        gamma=config['loss']['gamma'],
        n_h=evidence['n_h'],
        m_max=evidence['m_max'],
        gmm_k=evidence['gmm_k'],
        gmm_max_iters=evidence['gmm_max_iters'],
        gmm_tol=evidence['gmm_tol'],
        density_normalization=evidence['density_normalization'],
        seed=config['synth']['seed'],
    )
    values.update(overrides)
    return OptConfig(**values)


def loss_config_from(config: Dict[str, Any]) -> BayesianLossConfig:
    return BayesianLossConfig(gamma=config['loss']['gamma'])


def loss_weights_from(config: Dict[str, Any]) -> LossWeights:
    return LossWeights(**config['loss']['weights'])
