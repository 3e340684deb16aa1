"""Fixed-shard execution so that results never depend on the worker count."""

import os
from concurrent.futures import ThreadPoolExecutor

DEFAULT_SHARD_SIZE = 1 << 15
WORKERS_ENV = "SINAIFDD_WORKERS"


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def shard_sizes(n_samples, shard_size=None):
    shard_size = int(shard_size or DEFAULT_SHARD_SIZE)
    n_samples = int(n_samples)
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    full, rest = divmod(n_samples, shard_size)
    return [shard_size] * full + ([rest] if rest else [])


def run_shards(fn, n_samples, shard_size=None, workers=None):
    """Call ``fn(shard_index, shard_size)`` for each shard, results in shard order.

    The compiled kernels release the GIL, so threads give real parallelism.
    Each shard derives its own random stream from its index.
    """
    sizes = shard_sizes(n_samples, shard_size)
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(sizes) == 1:
        return [fn(i, s) for i, s in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(len(sizes)), sizes))
