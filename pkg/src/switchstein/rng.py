"""Reproducible random streams.

Every Monte Carlo path gets its own counter-based generator (Philox) keyed by
``(seed, path_index, purpose)``. Streams never depend on scheduling, so the
same seed reproduces the same numbers whatever the worker count.
"""

import numpy as np

RandomStream = np.random.Generator

# purpose tags for the per-path sub-streams
CHAIN = 0
NOISE = 1
INITIAL = 2


def make_stream(seed, *key):
    """Return an independent Philox generator for ``seed`` and a spawn key."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def path_streams(seed, path_index):
    """The (chain, noise, initial-value) streams owned by one path."""
    return (
        make_stream(seed, path_index, CHAIN),
        make_stream(seed, path_index, NOISE),
        make_stream(seed, path_index, INITIAL),
    )
