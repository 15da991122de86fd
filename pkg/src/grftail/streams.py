"""Deterministic random-stream plumbing.

Replications get independent substreams derived from (seed, replication
index) so that results are reproducible and independent of batching or
thread scheduling: merging partial runs with the same index assignment
replays the exact per-replication draws.
"""

import numpy as np

Seed = int | np.random.SeedSequence


def as_seed_sequence(seed: Seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def substream(base: Seed, *key: int) -> np.random.SeedSequence:
    """Child SeedSequence for an indexed substream of `base`.

    Equivalent to what SeedSequence.spawn produces, but stateless: the same
    (base, key) always maps to the same child.
    """
    base = as_seed_sequence(base)
    return np.random.SeedSequence(
        entropy=base.entropy, spawn_key=tuple(base.spawn_key) + tuple(int(k) for k in key)
    )


def generator(seed: Seed, *key: int) -> np.random.Generator:
    """Generator for the substream identified by (seed, *key)."""
    seq = substream(seed, *key) if key else as_seed_sequence(seed)
    return np.random.default_rng(seq)
