"""Deterministic derivation of named RNG substreams from one master seed.

Every piece of randomness in the package draws from a substream identified by
(master_seed, *keys). Streams are independent, so consuming one stream never
shifts another; replication r always sees the same draws regardless of how the
replications are scheduled.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream", "derive_seed"]


def _key_int(key: int | str) -> int:
    if isinstance(key, (int, np.integer)):
        k = int(key)
        if k < 0:
            raise ValueError(f"substream keys must be non-negative, got {k}")
        return k
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"substream key must be int or str, got {type(key).__name__}")


def _sequence(master_seed: int, keys: tuple[int | str, ...]) -> np.random.SeedSequence:
    if not isinstance(master_seed, (int, np.integer)) or int(master_seed) < 0:
        raise ValueError(f"master seed must be a non-negative integer, got {master_seed!r}")
    return np.random.SeedSequence([int(master_seed)] + [_key_int(k) for k in keys])


def substream(master_seed: int, *keys: int | str) -> np.random.Generator:
    """Generator for the substream named by ``keys`` under ``master_seed``."""
    return np.random.default_rng(_sequence(master_seed, keys))


def derive_seed(master_seed: int, *keys: int | str) -> int:
    """Plain integer seed for libraries that want one (e.g. random_state)."""
    return int(_sequence(master_seed, keys).generate_state(1, np.uint32)[0])
