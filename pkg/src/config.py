"""
Configuration for skillmix.

Environment-driven settings (optionally from a ``.env`` file), the named
hyperparameter presets, and loading/merging of the single JSON config file
used by the command line.
"""

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from dotenv import load_dotenv

from .core import ConfigError

logger = logging.getLogger(__name__)

# Learning-rate sweep used by the graph/online ablations
ETA_SWEEP = (0.1, 0.2, 0.5, 0.8)

PRESETS: Dict[str, Dict[str, Any]] = {
    'lego-pretrain': {
        'eta': 0.5, 'T': 6, 'w': 3,
        'curriculum_epochs': 5,
        'random_proportions': [1, 1, 1, 3, 5],
        'steps': 6000,
    },
    'addition-pretrain': {
        'eta': 0.1, 'T': 5, 'w': 3,
        'curriculum_epochs': 3,
        'random_proportions': [13, 14, 18],
        'steps': 6000,
    },
    'lego-finetune': {'eta': 0.5, 'T': 10, 'w': 3, 'steps': 6000},
    'addition-finetune': {'eta': 0.1, 'T': 5, 'w': 3, 'steps': 6000},
}

GRAPH_LEARNING_DEFAULTS: Dict[str, Any] = {
    'H': 6000,
    'threshold_loss': 0.01,
    'weight_scheme': 'binary_half',
    'compare_mode': 'steps_to_threshold',
}

SKILL_CURRICULUM_FRAC = 0.4
VALIDATION_PER_SKILL = 100


@dataclass(frozen=True)
class Settings:
    """Process-level settings read from the environment."""
    log_level: str = 'INFO'
    max_workers: int = 4
    trainer_timeout: float = 60.0
    output_dir: str = 'runs'

    @classmethod
    def from_env(cls, dotenv_path: Optional[str] = None) -> 'Settings':
        load_dotenv(dotenv_path)
        try:
            return cls(
                log_level=os.environ.get('SKILLMIX_LOG_LEVEL', 'INFO').upper(),
                max_workers=int(os.environ.get('SKILLMIX_MAX_WORKERS', '4')),
                trainer_timeout=float(os.environ.get('SKILLMIX_TRAINER_TIMEOUT', '60')),
                output_dir=os.environ.get('SKILLMIX_OUTPUT_DIR', 'runs'),
            )
        except ValueError as e:
            raise ConfigError(f"Invalid SKILLMIX_* environment value: {e}") from e


def get_preset(name: str) -> Dict[str, Any]:
    """Return a copy of a named preset."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return dict(PRESETS[name])


def load_json_config(path: Union[str, Path]) -> Dict[str, Any]:
    """Read the structured JSON config file."""
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    logger.debug(f"Loaded config {path} with keys {sorted(data)}")
    return data


def merge_overrides(config: Mapping[str, Any], cli_values: Mapping[str, Any]) -> Dict[str, Any]:
    """
    Combine preset, config file and command-line values.

    Precedence: explicit CLI value (not None) > config key > preset > default.
    A ``preset`` key in either source pulls in that preset's values first.
    """
    merged: Dict[str, Any] = {}
    preset_name = cli_values.get('preset') or config.get('preset')
    if preset_name:
        merged.update(get_preset(preset_name))
    merged.update(config)
    merged.update({key: value for key, value in cli_values.items() if value is not None})
    return merged
