import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from tqdm import tqdm

logger = logging.getLogger(__name__)


def parallel_map(fn, items, threads=1, desc=None):
    """
    Apply fn to every item, optionally on a thread pool

    Args:
        fn: Callable taking one item
        items: Iterable of inputs
        threads: Worker threads; 1 or less runs inline
        desc: Progress bar label (no bar when None)

    Returns:
        list: Results in input order, whatever the thread count
    """
    items = list(items)
    progress = tqdm(total=len(items), desc=desc, disable=True if desc is None else None, leave=False)
    try:
        if threads is None or threads <= 1 or len(items) <= 1:
            results = []
            for item in items:
                results.append(fn(item))
                progress.update(1)
            return results

        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(fn, item) for item in items]
            results = []
            for future in futures:
                results.append(future.result())
                progress.update(1)
            return results
    finally:
        progress.close()


def task_chunks(n_tasks, threads):
    """Split range(n_tasks) into at most `threads` contiguous (start, stop) blocks"""
    if threads is None or threads <= 1 or n_tasks <= 1:
        return [(0, n_tasks)]
    bounds = np.linspace(0, n_tasks, min(threads, n_tasks) + 1).astype(int)
    return [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def chunked_task_sums(task_index, values, n_tasks, threads=1):
    """
    Per-task sums of per-entry values

    Entries must be sorted by task; each chunk sums the same entries in the
    same order as a single pass, so the result is bit-identical for any
    thread count.
    """
    chunks = task_chunks(n_tasks, threads)
    if len(chunks) == 1:
        return np.bincount(task_index, weights=values, minlength=n_tasks)

    offsets = np.searchsorted(task_index, [lo for lo, _ in chunks] + [n_tasks])

    def _sum_chunk(position):
        lo, hi = chunks[position]
        start, stop = offsets[position], offsets[position + 1]
        return np.bincount(task_index[start:stop] - lo, weights=values[start:stop], minlength=hi - lo)

    return np.concatenate(parallel_map(_sum_chunk, range(len(chunks)), threads))
