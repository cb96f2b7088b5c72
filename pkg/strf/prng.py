"""
Reproducible random streams.

Every stream is a numpy ``Philox`` counter-based generator keyed by
``SeedSequence([seed, *keys, role])``. Philox is specified independently of
the platform, so a (seed, keys, role) triple produces the same numbers on any
machine, and streams for different sequences never depend on the order in
which they are drawn.
"""
import numpy as np

# Stream roles. Values are part of the reproducibility contract: never renumber.
ROLES = {
    "tracks": 0,
    "noise": 1,
    "split": 2,
    "batch": 3,
    "signal": 4,
    "baseline": 5,
    "gradient_check": 6,
}


def seed_sequence(seed, *keys, role):
    return np.random.SeedSequence([int(seed), *(int(key) for key in keys), ROLES[role]])


def stream(seed, *keys, role):
    """
    Return a Philox-backed Generator for ``(seed, *keys, role)``.
    """
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *keys, role=role)))


def shard_streams(seed, n_shards, role):
    """
    Independent generators for ``n_shards`` work shards, in shard order.
    """
    children = seed_sequence(seed, role=role).spawn(n_shards)
    return [np.random.Generator(np.random.Philox(child)) for child in children]
