"""
Worker pool for node-parallel stages.

Results come back in chunk order, so output does not depend on the
worker count.
"""
import logging
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, List, Optional, Sequence

import numpy as np

from config.config import SUPNORM_THREADS

logger = logging.getLogger(__name__)

_CTX = mp.get_context("spawn")
_SHARED: Any = None


def _init_worker(shared):
    global _SHARED
    _SHARED = shared


def _run_task(args):
    task, chunk = args
    return task(_SHARED, chunk)


def worker_count(requested: Optional[int] = None) -> int:
    """Requested workers capped by SUPNORM_THREADS (at least 1)."""
    cap = max(1, SUPNORM_THREADS)
    return max(1, min(requested or cap, cap))


def split_chunks(items: Sequence[int], n_chunks: int) -> List[np.ndarray]:
    items = np.asarray(items)
    if not len(items):
        return []
    return [c for c in np.array_split(items, max(1, min(n_chunks, len(items)))) if len(c)]


def map_chunks(task: Callable[[Any, np.ndarray], Any], shared: Any, chunks: Sequence[np.ndarray],
               workers: Optional[int] = None) -> list:
    """Apply task(shared, chunk) to every chunk; in-process when one worker is allowed.

    task must be a module-level function so it can be sent to spawned workers.
    """
    n_workers = worker_count(workers)
    if n_workers == 1 or len(chunks) <= 1:
        return [task(shared, chunk) for chunk in chunks]
    logger.debug(f"Dispatching {len(chunks)} chunks to {n_workers} workers")
    with ProcessPoolExecutor(max_workers=n_workers, initializer=_init_worker,
                             initargs=(shared,), mp_context=_CTX) as pool:
        return list(pool.map(_run_task, [(task, chunk) for chunk in chunks]))
