import logging
import os
from typing import Optional

from edgereg.errors import ConfigError

THREADS_ENV = "EDGEREG_THREADS"
LOG_LEVEL_ENV = "EDGEREG_LOG_LEVEL"


def get_thread_cap() -> Optional[int]:
    """Worker cap from EDGEREG_THREADS, or None when unset."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return None
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return cap


def resolve_workers(requested: int) -> int:
    cap = get_thread_cap()
    workers = max(1, requested)
    if cap is not None:
        workers = min(workers, cap)
    return workers


def get_log_level(verbose: bool = False) -> int:
    if verbose:
        return logging.DEBUG
    name = os.environ.get(LOG_LEVEL_ENV, "INFO").strip().upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO
