"""
Utility functions for boxrec.

Provides common utilities including:
- Logging setup
- YAML loading
- Atomic file and directory writes
"""

import logging
import os
import shutil
import tempfile
from pathlib import Path
from typing import Optional, Union

import yaml

from .errors import InputError

PathLike = Union[str, Path]

SEED_ENV_VAR = "BOXREC_SEED"


def setup_logging(
    level: str = "INFO",
    log_format: Optional[str] = None,
) -> logging.Logger:
    """
    Set up logging configuration.

    Args:
        level: Log level (DEBUG, INFO, WARNING, ERROR)
        log_format: Custom log format string

    Returns:
        Configured package logger
    """
    if log_format is None:
        log_format = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    log_level = os.getenv("LOG_LEVEL", level)
    logging.basicConfig(level=log_level, format=log_format)
    return logging.getLogger("boxrec")


def load_yaml_config(filepath: PathLike) -> dict:
    """
    Load a YAML configuration file.

    Args:
        filepath: Path to the YAML file

    Returns:
        Parsed configuration dict (empty dict for an empty file)
    """
    with open(filepath, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def atomic_write_text(path: PathLike, text: str) -> None:
    """Write ``text`` to ``path`` through a temp file and os.replace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def replace_directory(staging: PathLike, target: PathLike) -> None:
    """
    Move a fully written ``staging`` directory into place at ``target``.

    The previous ``target`` is renamed aside first and only removed once
    the new directory is in place, so an interruption never leaves
    ``target`` half-written.
    """
    staging = Path(staging)
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    backup = target.with_name(f".{target.name}.old")
    if backup.exists():
        shutil.rmtree(backup)
    if target.exists():
        os.replace(target, backup)
    os.replace(staging, target)
    if backup.exists():
        shutil.rmtree(backup)


def staging_directory(target: PathLike) -> Path:
    """Create an empty sibling directory to write ``target``'s contents into."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp"))


def write_manifest(path: PathLike, entries: dict) -> None:
    """Write ``key=value`` lines in insertion order."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key, value in entries.items():
            f.write(f"{key}={value}\n")


def read_manifest(path: PathLike) -> dict[str, str]:
    """Parse a ``key=value`` manifest; blank lines are ignored."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"manifest not found: {path}")
    entries = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise InputError(f"{path}:{line_number}: malformed manifest line: {line!r}")
            entries[key.strip()] = value.strip()
    return entries
