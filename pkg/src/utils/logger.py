import logging
import json
import os
import sys
from logging.handlers import RotatingFileHandler
from typing import Any, Dict, Optional, Union

LOG_LEVEL_ENV = "CASCADE_UQ_LOG_LEVEL"
LOG_FILE_ENV = "CASCADE_UQ_LOG_FILE"


class JSONFormatter(logging.Formatter):
    """
    JSON formatter for structured run logs.
    """
    def format(self, record: logging.LogRecord) -> str:
        log_record: Dict[str, Any] = {
            "timestamp": self.formatTime(record, self.datefmt),
            "level": record.levelname,
            "message": record.getMessage(),
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno
        }

        if record.exc_info:
            log_record["exception"] = self.formatException(record.exc_info)

        # Structured fields passed as extra={"extra_data": {...}}
        if hasattr(record, "extra_data"):
            log_record.update(record.extra_data)

        return json.dumps(log_record, default=str)


def resolve_level(level: Optional[Union[int, str]] = None) -> int:
    """Turn a flag/env level name into a logging level (INFO when unset)."""
    if level is None:
        level = os.getenv(LOG_LEVEL_ENV, "INFO")
    if isinstance(level, int):
        return level
    resolved = logging.getLevelName(str(level).upper())
    if not isinstance(resolved, int):
        raise ValueError(f"Unknown log level: {level}")
    return resolved


def setup_logging(
    level: Optional[Union[int, str]] = None,
    log_file: Optional[str] = None,
    max_bytes: int = 10 * 1024 * 1024,  # 10MB
    backup_count: int = 5
) -> logging.Logger:
    """
    Sets up project-wide logging configuration.

    Args:
        level: Logging level or level name (default: env CASCADE_UQ_LOG_LEVEL, then INFO)
        log_file: Path to the JSON log file; None disables file logging
        max_bytes: Maximum size of a log file before rotation
        backup_count: Number of backup log files to keep
    """
    logger = logging.getLogger()
    logger.setLevel(resolve_level(level))

    # Remove existing handlers to avoid duplicates
    if logger.hasHandlers():
        logger.handlers.clear()

    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_file, maxBytes=max_bytes, backupCount=backup_count
        )
        file_handler.setFormatter(JSONFormatter())
        logger.addHandler(file_handler)

    # Console goes to stderr; stdout carries command results
    console_handler = logging.StreamHandler(sys.stderr)
    console_format = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    console_handler.setFormatter(console_format)
    logger.addHandler(console_handler)

    return logger


def get_logger(name: str) -> logging.Logger:
    """
    Get a named logger instance.
    """
    return logging.getLogger(name)
