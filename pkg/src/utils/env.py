"""Run-time switches for ssm-surgeon read from the environment.

Dotenv files only fill in the two `SSM_SURGEON_*` variables below; every
other knob lives on the command line. An explicit path or `DOTENV_PATH`
replaces the default `.env.local` then `.env` lookup in the working
directory.
"""

import logging
import os
from pathlib import Path
from typing import List, Optional

from src.errors import ArgumentError

THREADS_VAR = "SSM_SURGEON_THREADS"
LOG_LEVEL_VAR = "SSM_SURGEON_LOG_LEVEL"
DEFAULT_DOTENVS = (".env.local", ".env")


def load_envs(dotenv_path: Optional[str] = None, override: bool = False) -> List[str]:
    """Read dotenv files into `os.environ` and return the ones found.

    `dotenv_path` (else `DOTENV_PATH`) names the only file to read. Without
    either, `.env.local` is read before `.env`, so with `override=False` a
    key set in `.env.local` or already in the shell wins.
    """
    from dotenv import load_dotenv

    explicit = dotenv_path or os.environ.get("DOTENV_PATH")
    candidates = [explicit] if explicit else list(DEFAULT_DOTENVS)
    loaded = [p for p in candidates if Path(p).is_file()]
    for path in loaded:
        load_dotenv(path, override=override)
    return loaded


def thread_limit() -> int:
    """Worker-thread cap from `SSM_SURGEON_THREADS`."""
    raw = os.environ.get(THREADS_VAR, "1").strip() or "1"
    try:
        value = int(raw)
    except ValueError as e:
        raise ArgumentError(f"{THREADS_VAR} must be an integer, got {raw!r}") from e
    if value < 1:
        raise ArgumentError(f"{THREADS_VAR} must be >= 1, got {value}")
    return value


def log_level() -> int:
    name = os.environ.get(LOG_LEVEL_VAR, "INFO").upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO
