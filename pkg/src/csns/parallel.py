"""Thread-count-independent chunked evaluation.

Work is split into contiguous slices of the leading axis. Every output row is
computed by the same numpy expression no matter which chunk it lands in, so
the assembled result is bitwise identical for any thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np
from threadpoolctl import threadpool_limits

_threads = 1


def set_threads(n: int | None) -> None:
    global _threads
    n = 1 if n is None else int(n)
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    _threads = n


def get_threads() -> int:
    return _threads


def default_threads() -> int:
    return int(os.environ.get("CSNS_THREADS", "1"))


def map_rows(fn, n: int, out: np.ndarray, min_chunk: int = 8) -> np.ndarray:
    """Fill ``out[i0:i1] = fn(i0, i1)`` over contiguous row blocks."""
    threads = min(_threads, max(1, n // min_chunk))
    if threads <= 1:
        out[...] = fn(0, n)
        return out
    bounds = np.linspace(0, n, threads + 1).astype(int)

    def work(k):
        i0, i1 = bounds[k], bounds[k + 1]
        out[i0:i1] = fn(i0, i1)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(work, range(threads)))
    return out


@contextmanager
def thread_limit(n: int | None):
    """Use ``n`` worker threads for row-parallel kernels; native BLAS pools stay at one thread.

    Row blocks never call into multi-threaded BLAS reductions, and pinning the
    native pools keeps every matrix product on the same code path regardless
    of ``n``.
    """
    previous = _threads
    set_threads(n)
    try:
        with threadpool_limits(limits=1):
            yield
    finally:
        set_threads(previous)
