"""Process-level parallelism with BLAS pinned to one thread.

Results never depend on the worker count: work units are computed
identically wherever they run and merged in submission order.
"""

from __future__ import annotations

import contextlib
import os
from concurrent.futures import ProcessPoolExecutor

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None


@contextlib.contextmanager
def single_thread_blas():
    if threadpool_limits is None:
        yield
        return
    with threadpool_limits(limits=1):
        yield


def default_jobs():
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover
        return max(1, os.cpu_count() or 1)


def _init_worker():
    if threadpool_limits is not None:
        threadpool_limits(limits=1)


def run_ordered(fn, items, jobs=1):
    """``[fn(x) for x in items]``, optionally across ``jobs`` processes."""
    items = list(items)
    if jobs is None:
        jobs = default_jobs()
    if jobs <= 1 or len(items) <= 1:
        with single_thread_blas():
            return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items)), initializer=_init_worker) as pool:
        return list(pool.map(fn, items))
