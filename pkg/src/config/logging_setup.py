"""Logging Setup

Console and timestamped file handlers for the package logger.
"""

import logging
from datetime import datetime
from pathlib import Path
from typing import Optional, Union

PACKAGE_LOGGER = "src"
FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


def setup_logging(level: Union[str, int] = "INFO", console: bool = True,
                  logs_dir: Optional[Union[str, Path]] = None, run_name: str = "prophetnet") -> logging.Logger:
    """Configure the package logger; returns it

    Re-running replaces earlier handlers, so repeated CLI invocations in one
    process do not duplicate output.
    """
    logger = logging.getLogger(PACKAGE_LOGGER)
    logger.setLevel(level if isinstance(level, int) else getattr(logging, str(level).upper(), logging.INFO))
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter(FORMAT, datefmt=DATE_FORMAT)

    if logs_dir:
        logs_dir = Path(logs_dir)
        if not logs_dir.is_absolute():
            logs_dir = Path.cwd() / logs_dir
        logs_dir.mkdir(parents=True, exist_ok=True)
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        file_handler = logging.FileHandler(logs_dir / f"{run_name}_{timestamp}.log", encoding="utf-8")
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    if console:
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)

    return logger
