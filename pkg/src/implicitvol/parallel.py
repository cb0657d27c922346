"""Optional thread fan-out for embarrassingly parallel point evaluation.

``IVOL_THREADS`` caps the worker count (unset or 0 = one per CPU).  Chunks
are reassembled by index, so results do not depend on the schedule.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def worker_count() -> int:
    raw = os.environ.get("IVOL_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"IVOL_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("IVOL_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)


def map_chunks(fn, total: int, chunk: int) -> np.ndarray:
    """Concatenate ``fn(lo, hi)`` over consecutive ranges covering ``total``."""
    bounds = [(lo, min(lo + chunk, total)) for lo in range(0, total, chunk)]
    workers = min(worker_count(), len(bounds))
    if workers <= 1:
        parts = [fn(lo, hi) for lo, hi in bounds]
    else:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda b: fn(*b), bounds))
    return np.concatenate(parts) if parts else np.zeros(0)
