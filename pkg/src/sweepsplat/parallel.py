"""Worker-pool helper honoring the C3GS_THREADS environment variable."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count(requested: int | None = None) -> int:
    """Resolve the worker-thread cap: explicit argument, then C3GS_THREADS,
    then auto (0 or unset means the CPU count)."""
    if requested is None:
        raw = os.environ.get("C3GS_THREADS", "0")
        try:
            requested = int(raw)
        except ValueError:
            requested = 0
    if requested <= 0:
        return os.cpu_count() or 1
    return requested


def parallel_map(fn, items, workers: int | None = None) -> list:
    """Map preserving order. Work units must be independent, so results do
    not depend on the worker count."""
    items = list(items)
    n = worker_count(workers)
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
