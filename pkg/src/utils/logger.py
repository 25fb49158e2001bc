"""Structured logging for the stability probe."""

import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Dict, List, Optional

from .errors import ConfigError


ROOT = 'stability'
CONSOLE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
FILE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'
MAX_LOG_BYTES = 10 * 1024 * 1024


def _plain(value: Any) -> Any:
    """numpy scalars and arrays, and non-finite floats, as JSON-safe values."""
    if hasattr(value, 'tolist'):
        value = value.tolist()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value if isinstance(value, (str, int, float, bool, type(None), dict)) else str(value)


class JSONFormatter(logging.Formatter):
    """One JSON object per record; keyword extras go under 'extra'."""

    def format(self, record: logging.LogRecord) -> str:
        entry: Dict[str, Any] = {
            'timestamp': datetime.now(timezone.utc).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
            'module': record.module,
            'line': record.lineno,
        }
        extra = getattr(record, 'extra_data', None)
        if extra:
            entry['extra'] = {k: _plain(v) for k, v in extra.items()}
        if record.exc_info:
            entry['exception'] = self.formatException(record.exc_info)
        return json.dumps(entry, default=str)


class KeyValueFormatter(logging.Formatter):
    """Plain formatter that appends extra data as key=value pairs."""

    def format(self, record: logging.LogRecord) -> str:
        message = super().format(record)
        extra = getattr(record, 'extra_data', None)
        if extra:
            pairs = ' '.join(f'{k}={v}' for k, v in extra.items())
            message = f'{message} [{pairs}]'
        return message


@dataclass
class LogSettings:
    level: str = 'WARNING'
    log_dir: Optional[str] = None
    enable_json: bool = False

    def __post_init__(self):
        self.level = str(self.level).upper()
        if not isinstance(logging.getLevelName(self.level), int):
            raise ConfigError(f'Unknown log level: {self.level!r}')

    @property
    def levelno(self) -> int:
        return logging.getLevelName(self.level)


def _build_handlers(name: str, settings: LogSettings) -> List[logging.Handler]:
    """Console handler on stderr, plus general and error files under log_dir."""
    def formatter(fmt: str) -> logging.Formatter:
        return JSONFormatter() if settings.enable_json else KeyValueFormatter(fmt, datefmt=DATE_FORMAT)

    # stdout carries reports
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(settings.levelno)
    console.setFormatter(formatter(CONSOLE_FORMAT))
    handlers: List[logging.Handler] = [console]

    if settings.log_dir:
        log_path = Path(settings.log_dir)
        log_path.mkdir(parents=True, exist_ok=True)
        for suffix, level in (('', settings.levelno), ('_error', logging.ERROR)):
            handler = RotatingFileHandler(log_path / f'{name}{suffix}.log', maxBytes=MAX_LOG_BYTES, backupCount=5)
            handler.setLevel(level)
            handler.setFormatter(formatter(FILE_FORMAT))
            handlers.append(handler)
    return handlers


class ProbeLogger:
    """
    Service logger taking keyword extras:

        logger.info('Value surface sweep', problem='ex32', nodes=25)
    """

    def __init__(
        self,
        name: str,
        log_level: str = 'INFO',
        log_dir: Optional[str] = None,
        enable_json: bool = False
    ):
        self.name = name
        self.logger = logging.getLogger(f'{ROOT}.{name}')
        self.logger.propagate = False
        self.configure(LogSettings(log_level, log_dir, enable_json))

    def configure(self, settings: LogSettings) -> None:
        """Replace level and handlers."""
        for handler in self.logger.handlers:
            handler.close()
        self.logger.handlers = _build_handlers(self.name, settings)
        self.logger.setLevel(settings.levelno)

    def _log(self, level: int, message: str, kwargs: Dict[str, Any], **options) -> None:
        extra = {'extra_data': kwargs} if kwargs else {}
        self.logger.log(level, message, extra=extra, stacklevel=3, **options)

    def debug(self, message: str, **kwargs) -> None:
        self._log(logging.DEBUG, message, kwargs)

    def info(self, message: str, **kwargs) -> None:
        self._log(logging.INFO, message, kwargs)

    def warning(self, message: str, **kwargs) -> None:
        self._log(logging.WARNING, message, kwargs)

    def error(self, message: str, exc_info: bool = False, **kwargs) -> None:
        self._log(logging.ERROR, message, kwargs, exc_info=exc_info)

    def exception(self, message: str, **kwargs) -> None:
        """Log at ERROR with the active traceback."""
        self._log(logging.ERROR, message, kwargs, exc_info=True)


# Global logger instances
_loggers: Dict[str, ProbeLogger] = {}
_settings = LogSettings(os.getenv('LOG_LEVEL') or 'WARNING')


def get_logger(name: str) -> ProbeLogger:
    """Shared logger for a service module, using the current global settings."""
    if name not in _loggers:
        _loggers[name] = ProbeLogger(name, _settings.level, _settings.log_dir, _settings.enable_json)
    return _loggers[name]


def setup_logging(log_level: str = 'INFO', log_dir: Optional[str] = None, enable_json: bool = False) -> None:
    """
    Apply level, file directory and format to every probe logger.

    Loggers created later pick up the same settings.

    Raises:
        ConfigError: unknown level name
    """
    global _settings
    _settings = LogSettings(log_level, log_dir, enable_json)
    for logger in _loggers.values():
        logger.configure(_settings)
