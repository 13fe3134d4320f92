"""Loguru setup: a quiet console for experiment progress, an optional detailed log file.

Records emitted inside a Monte Carlo run carry the run index in `extra["run"]`
(see batch.run_batch); records emitted by run_experiment carry the experiment
name in `extra["experiment"]`.
"""

import os
import sys
from pathlib import Path

from loguru import logger

# Track if logging has been configured to avoid duplicate handlers
_logging_configured = False

WARNING_LEVEL = 30

CONSOLE_FORMAT = (
    "<green>{time:HH:mm:ss}</green> | "
    "<level>{level: <8}</level> | "
    "<cyan>{extra[experiment]}</cyan> | "
    "<level>{message}</level>"
)

FILE_FORMAT = (
    "{time:YYYY-MM-DD HH:mm:ss.SSS} | "
    "{level: <8} | "
    "{extra[experiment]} | run {extra[run]} | "
    "{name}:{function}:{line} | "
    "{message}"
)


def setup_logging(verbose: bool = False, force: bool = False, log_file: str | Path | None = None):
    """Install the console handler and, if requested, a rotating file handler.

    Args:
        verbose: Show DEBUG records and per-run records on the console
        force: Reconfigure even if already configured
        log_file: Path of the detailed log (default: LOG_FILE environment variable)

    Environment Variables:
        LOG_FILE: If set, logs will be saved to this file (e.g., LOG_FILE=lab.log)
        LOG_LEVEL: Console log level (DEBUG, INFO, WARNING, ERROR). Default: INFO

    Example:
        >>> setup_logging(verbose=True)
        >>> # LOG_FILE=lab.log stochgrad-lab run configs/polya.toml
    """
    global _logging_configured

    if _logging_configured and not force:
        return logger

    logger.remove()
    logger.configure(extra={"experiment": "-", "run": "-"})

    log_level = os.getenv("LOG_LEVEL", "DEBUG" if verbose else "INFO")
    logger.add(
        sys.stderr,
        format=CONSOLE_FORMAT,
        level=log_level,
        colorize=True,
        filter=lambda record: _should_show_on_console(record, verbose),
    )

    log_file = log_file or os.getenv("LOG_FILE")
    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        logger.add(
            log_path,
            format=FILE_FORMAT,
            level="DEBUG",
            rotation="10 MB",
            retention="7 days",
            compression="zip",
            enqueue=True,
        )
        logger.info(f"Logging to file: {log_path}")

    _logging_configured = True
    return logger


def _should_show_on_console(record, verbose: bool) -> bool:
    """Warnings always; DEBUG and records from inside a single run only when verbose."""
    if record["level"].no >= WARNING_LEVEL or verbose:
        return True
    if record["level"].name == "DEBUG":
        return False
    return record["extra"].get("run", "-") == "-"
