"""Chunked thread pool over path indices.

Kernels are compiled with ``nogil=True`` and write into preallocated arrays
at each path's own row, so the result does not depend on the number of
workers or on completion order.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable


def default_threads() -> int:
    return max(1, os.cpu_count() or 1)


def run_chunks(n_paths: int, work: Callable[[int, int], None], threads: int | None = None,
               chunk: int | None = None) -> None:
    """Call ``work(start, stop)`` over [0, n_paths) in chunks, possibly in parallel."""
    threads = threads or default_threads()
    if chunk is None:
        chunk = max(1, min(4096, -(-n_paths // (4 * threads))))
    spans = [(s, min(n_paths, s + chunk)) for s in range(0, n_paths, chunk)]
    if threads == 1 or len(spans) == 1:
        for s, e in spans:
            work(s, e)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for fut in [pool.submit(work, s, e) for s, e in spans]:
            fut.result()
