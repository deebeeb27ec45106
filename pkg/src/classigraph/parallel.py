"""Worker-count plumbing.

Results never depend on the worker count: work items are mapped in input
order and reductions happen after the map, so ``ordered_map`` with N
threads returns exactly what the sequential loop returns.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

WORKERS_ENV = "CLASSIGRAPH_WORKERS"


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        raw = os.environ.get(WORKERS_ENV)
        workers = int(raw) if raw else 1
    return max(1, int(workers))


def ordered_map(fn, items, workers: int | None = None) -> list:
    items = list(items)
    workers = resolve_workers(workers)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
