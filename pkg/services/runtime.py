# File: services/runtime.py
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "FROSTING_THREADS"


def resolve_threads(threads: Optional[int] = None) -> int:
    """Explicit value first, then FROSTING_THREADS, then the CPU count."""
    if threads is not None and threads > 0:
        return int(threads)
    env_value = os.getenv(THREADS_ENV)
    if env_value:
        try:
            parsed = int(env_value)
            if parsed > 0:
                return parsed
        except ValueError:
            logger.warning(f"⚠️ Ignoring {THREADS_ENV}={env_value!r}, not an integer")
    return os.cpu_count() or 1


def parallel_map(
    fn: Callable[[T], R], items: Sequence[T], threads: Optional[int] = None
) -> List[R]:
    """Apply `fn` to every item; results come back in input order whatever the thread count."""
    workers = min(resolve_threads(threads), max(len(items), 1))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
