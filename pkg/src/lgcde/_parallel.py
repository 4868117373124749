"""Fixed-chunk thread map.

Chunk boundaries never depend on the thread count, and each output row is
computed from its own chunk only, so results are bit-identical for any
``threads`` value.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK_ROWS = 256


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        return os.cpu_count() or 1
    return max(1, int(threads))


def map_chunks(fn, m: int, threads: int | None = 1, chunk: int = CHUNK_ROWS) -> list:
    """Call ``fn(lo, hi)`` on consecutive row slices of ``range(m)`` and return results in order."""
    bounds = [(lo, min(lo + chunk, m)) for lo in range(0, m, chunk)]
    threads = resolve_threads(threads)
    if threads == 1 or len(bounds) <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))


def concat_chunks(fn, m: int, threads: int | None = 1, chunk: int = CHUNK_ROWS):
    """Like :func:`map_chunks` for functions returning arrays or tuples of arrays."""
    parts = map_chunks(fn, m, threads, chunk)
    if not parts:
        return None
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p) for p in zip(*parts))
    return np.concatenate(parts)
