"""
Configuration management.

Defaults live in DEFAULTS (mirrored by the repository's config.json). A JSON
file given explicitly, or through the GROWTHLAB_CONFIG environment variable,
is deep-merged over them. Values are read with dotted keys:

    config.get('solver.rtol', 1e-10)
"""

import copy
import json
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv import load_dotenv

from growthlab.errors import ConfigError

DEFAULTS: Dict[str, Any] = {
    "grid": {
        "n": 256,
        "half_width": 2.0,
    },
    "solver": {
        "rtol": 1e-10,
        "beltrami_floor": 1e-6,
        "negative_clamp": 1e-9,
        "singular_clearance": 3,
    },
    "psor": {
        "omega": 1.9,
        "tol": 1e-11,
        "warm_sweeps": 400,
        "max_sweeps": 20000,
        "polish_rounds": 25,
    },
    "growth": {
        "cfl_factor": 0.4,
        "reinit_interval": 5,
        "snapshot_stride": 10,
    },
    "balayage": {
        "box_inflation": 2.5,
        "margin_fraction": 0.25,
        "mass_tolerance": 0.005,
    },
    "dtn": {
        "max_order": 6,
    },
    "logging": {
        "dir": None,
        "console_level": "INFO",
    },
}


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any], path: str = "") -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        dotted = f"{path}.{key}" if path else key
        if key not in merged:
            raise ConfigError("unknown setting", field=dotted)
        if isinstance(merged[key], dict):
            if not isinstance(value, dict):
                raise ConfigError("expected an object", field=dotted)
            merged[key] = _deep_merge(merged[key], value, dotted)
        else:
            merged[key] = value
    return merged


class ConfigManager:
    """
    Dotted-key access to growthlab settings.

    Attributes:
        path (Optional[Path]): File the overrides were read from, if any
    """

    def __init__(self, path: Optional[Union[str, Path]] = None):
        load_dotenv()
        self._data = copy.deepcopy(DEFAULTS)

        if path is None and os.environ.get('GROWTHLAB_CONFIG'):
            path = os.environ['GROWTHLAB_CONFIG']
        self.path = Path(path) if path is not None else None

        if self.path is not None:
            self.load(self.path)

        if os.environ.get('GROWTHLAB_LOG_DIR'):
            self._data['logging']['dir'] = os.environ['GROWTHLAB_LOG_DIR']

    def load(self, path: Path):
        """Merge settings from a JSON file over the current values."""
        try:
            text = Path(path).read_text(encoding='utf-8')
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}")
        try:
            overrides = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e.msg}", line=e.lineno)
        if not isinstance(overrides, dict):
            raise ConfigError("top level must be an object")
        self._data = _deep_merge(self._data, overrides)

    def update(self, overrides: Dict[str, Any], origin: str = "settings"):
        """Merge an in-memory override tree (e.g. a scenario's settings block)."""
        self._data = _deep_merge(self._data, overrides, origin)

    def get(self, key: str, default: Any = None) -> Any:
        """Return the value at a dotted key, or default when absent."""
        node: Any = self._data
        for part in key.split('.'):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return default if node is None else node

    def set(self, key: str, value: Any):
        """Set the value at a dotted key (the --grid-n override)."""
        parts = key.split('.')
        node = self._data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value

    def as_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self._data)


_settings: Optional[ConfigManager] = None


def settings() -> ConfigManager:
    """Process-wide configuration, created on first use."""
    global _settings
    if _settings is None:
        _settings = ConfigManager()
    return _settings


def use_settings(config: ConfigManager):
    """Install config as the process-wide configuration."""
    global _settings
    _settings = config
