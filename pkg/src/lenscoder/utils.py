"""Small shared helpers: worker-count control and RNG stream spawning."""

import os

import numpy as np


def worker_count():
    """Number of parallel workers, capped by the LENSCODER_THREADS env var."""
    n = os.cpu_count() or 1
    cap = os.environ.get("LENSCODER_THREADS")
    if cap is not None:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def spawn_rngs(seed, n):
    """Derive ``n`` independent RNG streams from a master seed.

    Streams are stable across runs and platforms (PCG64 integer state),
    so per-example noise is reproducible regardless of batch order.
    """
    seq = np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.PCG64(s)) for s in seq.spawn(n)]


def rng_from_seed(seed):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
