"""Order-preserving map over a fork-based process pool."""

from __future__ import annotations

import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor

# read by worker functions; set before the pool forks
STATE: dict = {}


def n_workers(threads: int) -> int:
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return threads


def pmap(fn, items, threads: int = 1):
    """``[fn(i) for i in items]``, run on ``threads`` processes when > 1.

    Results come back in input order, so outputs do not depend on scheduling.
    """
    items = list(items)
    workers = min(n_workers(threads), len(items))
    if workers <= 1:
        return [fn(i) for i in items]
    ctx = mp.get_context("fork")
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
        return list(ex.map(fn, items, chunksize=chunk))
