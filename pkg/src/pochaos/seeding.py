"""Deterministic stream derivation.

Every stochastic routine in the package consumes a ``numpy.random.Generator``.
Independent streams are derived by hashing structured keys (master seed,
experiment id, replica index, per-event labels) with blake2b, so results are
reproducible bit-for-bit regardless of worker count or call order.

The replica rule used by all estimators and the CLI is
``replica_seed(master_seed, experiment_id, replica_index)``.
"""

import hashlib

import numpy as np


def derive_seed(*parts):
    """Hash a tuple of ints and strings into a 64-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, str):
            data = part.encode("utf8")
        elif isinstance(part, (int, np.integer)):
            data = int(part).to_bytes(16, "little", signed=True)
        else:
            raise TypeError(f"seed parts must be int or str, got {type(part).__name__}")
        h.update(len(data).to_bytes(2, "little"))
        h.update(data)
    return int.from_bytes(h.digest(), "little")


def spawn_rng(*parts):
    """Generator seeded from a structured key."""
    return np.random.default_rng(derive_seed(*parts))


def replica_seed(master_seed, experiment_id, replica):
    return derive_seed(master_seed, experiment_id, replica)


def replica_rng(master_seed, experiment_id, replica):
    return np.random.default_rng(replica_seed(master_seed, experiment_id, replica))
