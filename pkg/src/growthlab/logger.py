"""
Logging system configuration.
Console output is always available; a timestamped log file is attached
when a run directory is known (the CLI passes its output directory).
"""

import logging
import os
import sys
from enum import Enum
from pathlib import Path
from typing import Optional, Union
from datetime import datetime

from growthlab.utils.log_formatting import ColoredFormatter

LOGGER_NAME = 'GrowthLab'

class LogLevel(Enum):
    """Log level enumeration matching standard logging levels."""
    DEBUG = logging.DEBUG
    INFO = logging.INFO
    WARNING = logging.WARNING
    ERROR = logging.ERROR

class Logger:
    """Centralized logging configuration."""

    def __init__(self, log_dir: Optional[Union[str, Path]] = None):
        """
        Initialize logging system.

        Args:
            log_dir: Directory for a timestamped log file. Falls back to the
                GROWTHLAB_LOG_DIR environment variable; without either only
                the console handler is installed.
        """
        self.logger = logging.getLogger(LOGGER_NAME)
        self.logger.setLevel(LogLevel.DEBUG.value)
        self.logger.propagate = False

        if log_dir is None and os.environ.get('GROWTHLAB_LOG_DIR'):
            log_dir = os.environ['GROWTHLAB_LOG_DIR']

        if not self._has_handler(logging.StreamHandler, exclude=logging.FileHandler):
            console_handler = logging.StreamHandler(sys.stdout)
            console_handler.setLevel(logging.INFO)
            console_handler.setFormatter(ColoredFormatter(use_color=sys.stdout.isatty()))
            self.logger.addHandler(console_handler)

        if log_dir is not None and not self._has_handler(logging.FileHandler):
            self.attach_file(log_dir)

    def _has_handler(self, kind, exclude=None) -> bool:
        for handler in self.logger.handlers:
            if isinstance(handler, kind) and not (exclude and isinstance(handler, exclude)):
                return True
        return False

    def attach_file(self, log_dir: Union[str, Path]) -> Path:
        """Attach a DEBUG-level file handler writing into log_dir."""
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)

        timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
        log_file = log_dir / f"growthlab_{timestamp}.log"

        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(
            '%(asctime)s.%(msecs)03d %(levelname)-8s %(name)s: %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        ))
        self.logger.addHandler(file_handler)
        self.logger.debug(f"Log file created at: {log_file}")
        return log_file

    def detach_files(self):
        """Close and remove file handlers (end of a CLI run)."""
        for handler in list(self.logger.handlers):
            if isinstance(handler, logging.FileHandler):
                handler.close()
                self.logger.removeHandler(handler)

    def set_console_level(self, level: LogLevel):
        """Change the console threshold, e.g. WARNING for --quiet."""
        for handler in self.logger.handlers:
            if isinstance(handler, logging.StreamHandler) and not isinstance(handler, logging.FileHandler):
                handler.setLevel(level.value)

    def debug(self, msg: str):
        """Log debug message."""
        self.logger.debug(msg)

    def info(self, msg: str):
        """Log info message."""
        self.logger.info(msg)

    def warning(self, msg: str):
        """Log warning message."""
        self.logger.warning(msg)

    def error(self, msg: str):
        """Log error message."""
        self.logger.error(msg)

__all__ = ['Logger', 'LogLevel']
