"""
Logging utilities for the simulator
Module loggers on stderr plus tab-separated writers for trace/detection logs
"""
import logging
import sys
from pathlib import Path
from typing import Optional, TextIO, Union

from config import Config

DEFAULT_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logger(
    name: str,
    level: Union[int, str, None] = None,
    log_file: Optional[str] = None,
    format_string: Optional[str] = None
) -> logging.Logger:
    """
    Setup a logger with consistent formatting

    Args:
        name: Logger name
        level: Logging level (default: Config.LOG_LEVEL)
        log_file: Optional file path to log to (default: Config.LOG_FILE)
        format_string: Optional custom format string

    Returns:
        Configured logger instance
    """
    if level is None:
        level = Config.LOG_LEVEL
    if log_file is None:
        log_file = Config.LOG_FILE
    if format_string is None:
        format_string = DEFAULT_FORMAT

    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.propagate = False

    # Remove existing handlers
    logger.handlers.clear()

    # Console handler - stderr keeps stdout free for CLI output
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    console_handler.setFormatter(logging.Formatter(format_string))
    logger.addHandler(console_handler)

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)

        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(level)
        file_handler.setFormatter(logging.Formatter(format_string))
        logger.addHandler(file_handler)

    return logger


def get_logger(name: str) -> logging.Logger:
    """
    Get an existing logger or create a new one with default settings

    Args:
        name: Logger name

    Returns:
        Logger instance
    """
    logger = logging.getLogger(name)

    if not logger.handlers:
        return setup_logger(name)

    return logger


def set_global_level(level: Union[int, str]) -> None:
    """Apply a level to every logger created through this module"""
    for logger in list(logging.Logger.manager.loggerDict.values()):
        if isinstance(logger, logging.Logger) and logger.handlers:
            logger.setLevel(level)
            for handler in logger.handlers:
                handler.setLevel(level)


class TabLogWriter:
    """
    Tab-separated line writer for machine-readable run logs

    One record per line, no header. Floats are written with a fixed number of
    decimals so files are byte-stable across executions.
    """

    def __init__(self, path: Union[str, Path, None] = None, stream: Optional[TextIO] = None,
                 float_digits: int = 6):
        if path is not None:
            target = Path(path)
            target.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(target, 'w', encoding='utf-8', newline='\n')
            self._owned = True
        elif stream is not None:
            self._fh = stream
            self._owned = False
        else:
            raise ValueError("TabLogWriter needs a path or a stream")
        self.path = path
        self._float_fmt = f"{{:.{float_digits}f}}"
        self.lines = 0

    def _fmt(self, value) -> str:
        if isinstance(value, float):
            return self._float_fmt.format(value)
        return str(value)

    def write(self, *fields) -> None:
        self._fh.write('\t'.join(self._fmt(f) for f in fields) + '\n')
        self.lines += 1

    def close(self) -> None:
        if self._owned and not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
