"""Configuration loader for probe_config.yaml and environment variables."""

import os
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

import yaml
from dotenv import load_dotenv

from .errors import ConfigError


DEFAULT_CONFIG_PATH = Path(__file__).resolve().parents[2] / 'config' / 'probe_config.yaml'

SECTIONS = ('localization', 'solver', 'tolerances', 'probes', 'logging')

# environment variable -> (dotted key, cast)
ENV_OVERRIDES: Dict[str, Tuple[str, Callable[[str], Any]]] = {
    'PROBE_WORKERS': ('solver.workers', int),
    'PROBE_SEED': ('solver.seed', int),
    'PROBE_LOG_DIR': ('logging.log_dir', str),
    'LOG_LEVEL': ('logging.level', str.upper),
}


class Config:
    """
    Probe settings read from YAML, with environment overrides on top.

    Sections: localization, solver, tolerances, probes and logging. A .env file
    in the working directory is honoured before the overrides are applied.
    """

    def __init__(self, config_path: Optional[str] = None):
        load_dotenv()
        if config_path is None:
            config_path = os.getenv('PROBE_CONFIG', str(DEFAULT_CONFIG_PATH))
        self.config_path = Path(config_path)
        self._config: Dict[str, Any] = self._read(self.config_path)
        self._apply_env()

    @staticmethod
    def _read(path: Path) -> Dict[str, Any]:
        if not path.exists():
            raise FileNotFoundError(f"Configuration file not found: {path}")
        with open(path, 'r') as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ConfigError(f'{path} must hold a mapping of sections')
        for name in SECTIONS:
            if data.get(name) is not None and not isinstance(data[name], dict):
                raise ConfigError(f'Section {name!r} in {path} must be a mapping')
        return data

    def _apply_env(self) -> None:
        for var, (key, cast) in ENV_OVERRIDES.items():
            raw = os.getenv(var)
            if not raw:
                continue
            try:
                self.set(key, cast(raw))
            except ValueError as e:
                raise ConfigError(f'{var}={raw!r} is not valid for {key}') from e

    def get(self, key: str, default: Any = None) -> Any:
        """
        Dot-notation lookup.

        Example:
            >>> config.get('solver.grid', 41)
            41
        """
        value: Any = self._config
        for part in key.split('.'):
            if not isinstance(value, dict) or part not in value:
                return default
            value = value[part]
        return value

    def set(self, key: str, value: Any) -> None:
        *parents, leaf = key.split('.')
        node = self._config
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value

    def section(self, name: str) -> Dict[str, Any]:
        """One top-level section; missing or empty sections read as {}."""
        return self.get(name) or {}

    @property
    def log_level(self) -> str:
        return str(self.get('logging.level') or 'INFO').upper()

    def as_dict(self) -> Dict[str, Any]:
        """Deep copy of the settings tree."""
        return yaml.safe_load(yaml.safe_dump(self._config))

    def save(self, path: Optional[str] = None) -> None:
        save_path = Path(path) if path else self.config_path
        with open(save_path, 'w') as f:
            yaml.safe_dump(self._config, f, default_flow_style=False, sort_keys=False)


# Global configuration instance
_config: Optional[Config] = None


def get_config() -> Config:
    """Shared Config for the default location, created on first use."""
    global _config
    if _config is None:
        _config = Config()
    return _config


def load_config(config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Settings tree as a plain dict.

    Args:
        config_path: YAML file; the shared default configuration when None
    """
    if config_path is not None:
        return Config(config_path).as_dict()
    return get_config().as_dict()
