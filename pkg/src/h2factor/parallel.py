"""Deterministic worker pool.

Parallel phases only ever map pure tasks whose results are collected in
input order; all accumulation into shared blocks happens sequentially in
a fixed order outside the pool.  Results are therefore bitwise identical
for any thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

__all__ = ["WorkerPool"]


class WorkerPool:
    def __init__(self, threads=1):
        self.threads = max(1, int(threads))
        self._ex = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def map(self, fn, items):
        items = list(items)
        if self._ex is None or len(items) < 2:
            return [fn(it) for it in items]
        return list(self._ex.map(fn, items))

    def close(self):
        if self._ex is not None:
            self._ex.shutdown()
            self._ex = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
