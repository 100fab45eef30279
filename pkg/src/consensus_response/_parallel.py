"""Thread fan-out with deterministic result ordering."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "CONSENSUS_RESPONSE_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else the environment override, else the core count."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            threads = int(env)
    if threads is None:
        threads = os.cpu_count() or 1
    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    return threads


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    """``[fn(x) for x in items]``, possibly on a thread pool; order is preserved."""
    items = list(items)
    n = min(resolve_threads(threads), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def sample_seed(seed: int, *counters: int) -> int:
    """Child seed derived from a master seed and a counter tuple."""
    ss = np.random.SeedSequence([int(seed), *(int(c) for c in counters)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
