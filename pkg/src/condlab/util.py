"""Seeding, reductions, and optional process-level parallelism."""

import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np


def child_rng(master_seed, *path):
    """Independent generator for a node of the seed tree.

    The path is a tuple of small ints (experiment id, realization index,
    walk index, ...).  The same (seed, path) always yields the same stream,
    no matter in which order or on which worker it is drawn.
    """
    return np.random.default_rng(np.random.SeedSequence((int(master_seed),) + tuple(int(p) for p in path)))


def stable_sum(values):
    """Order-independent float sum (exact accumulation via math.fsum)."""
    return math.fsum(np.asarray(values, dtype=float).ravel().tolist())


def stable_mean(values):
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("mean of empty array")
    return stable_sum(arr) / arr.size


def mean_and_stderr(samples, axis=0):
    """Sample mean and standard error of the mean along an axis."""
    arr = np.asarray(samples, dtype=float)
    k = arr.shape[axis]
    mean = arr.mean(axis=axis)
    if k < 2:
        return mean, np.zeros_like(mean)
    sd = arr.std(axis=axis, ddof=1)
    return mean, sd / math.sqrt(k)


def parallel_map(fn, items, workers=1):
    """Map fn over items, optionally on a process pool.

    Results come back in input order.  Each item must be picklable when
    workers > 1; with workers <= 1 this is a plain loop, which keeps
    tracebacks readable during debugging.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
