"""Deterministic row-parallel map capped by ``SKIM_THREADS``."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count(requested: int | None = None) -> int:
    if requested is None:
        try:
            requested = int(os.environ.get("SKIM_THREADS", "0"))
        except ValueError:
            requested = 0
    if requested <= 0:
        requested = os.cpu_count() or 1
    return max(1, requested)


def map_rows(fn, items, workers: int | None = None) -> list:
    """``list(map(fn, items))``; results are in input order regardless of scheduling."""
    items = list(items)
    n = worker_count(workers)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
