"""Logging utilities for hardball"""

import logging
import sys
from pathlib import Path


def setup_logging(level=None, log_file=None):
    """Set up logging for hardball

    Args:
        level: Logging level (left unchanged when None)
        log_file: Optional log file path

    Returns:
        The configured logger
    """
    logger = logging.getLogger("hardball")

    # Already configured: adjust level and extra file handler only
    if logger.hasHandlers():
        if level is not None:
            logger.setLevel(level)
        if log_file:
            _add_file_handler(logger, log_file)
        return logger

    logger.setLevel(level if level is not None else logging.INFO)

    # Prevent propagation to avoid duplicate logs in parent loggers
    logger.propagate = False

    # Console handler on stderr; stdout carries JSON output
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(_formatter())
    logger.addHandler(console_handler)

    if log_file:
        _add_file_handler(logger, log_file)

    return logger


def _formatter():
    return logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )


def _add_file_handler(logger, log_file):
    """Attach a file handler unless one already writes to log_file"""
    log_path = Path(log_file)
    for handler in logger.handlers:
        if isinstance(handler, logging.FileHandler) and Path(handler.baseFilename) == log_path.resolve():
            return
    log_path.parent.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(log_file)
    file_handler.setFormatter(_formatter())
    logger.addHandler(file_handler)
