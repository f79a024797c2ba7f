"""Deterministic stream derivation.

Every random draw in the package comes from a stream keyed by
``(master seed, key...)``.  Keys are small integers or strings; strings are
hashed with CRC32 so the mapping is stable across processes and platforms.
Streams for different keys are statistically independent (numpy
``SeedSequence`` spawn semantics), which is what makes replicate results
independent of the order or degree of parallelism in which they run.
"""

from __future__ import annotations

import zlib
from typing import Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


def _key_int(k) -> int:
    if isinstance(k, (bool, np.bool_)):
        return int(k)
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    if isinstance(k, float):
        # intensities and radii show up as keys; hash their exact repr
        return zlib.crc32(repr(k).encode())
    return zlib.crc32(str(k).encode())


def derive(seed: SeedLike, *key) -> np.random.SeedSequence:
    """Child seed sequence for ``key`` under ``seed``."""
    if isinstance(seed, np.random.Generator):
        seed = seed.bit_generator.seed_seq
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(
            entropy=seed.entropy,
            spawn_key=tuple(seed.spawn_key) + tuple(_key_int(k) for k in key),
            pool_size=seed.pool_size,
        )
    if seed is None:
        raise ValueError("a seed is mandatory")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_int(k) for k in key))


def stream(seed: SeedLike, *key) -> np.random.Generator:
    """Generator for ``key`` under ``seed``."""
    return np.random.default_rng(derive(seed, *key))


def as_generator(seed: SeedLike) -> np.random.Generator:
    """Pass generators through; seed anything else."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise ValueError("a seed is mandatory")
    return np.random.default_rng(seed)


def split(seed: SeedLike, n: int) -> list[np.random.Generator]:
    """``n`` independent generators from one seed.

    Generators are spawned (which advances their internal state); anything
    else is split by key so the result only depends on ``seed``.
    """
    if isinstance(seed, np.random.Generator):
        return list(seed.spawn(n))
    return [stream(seed, k) for k in range(n)]


def seed_record(seed: SeedLike, *key) -> dict:
    """JSON-friendly description of a stream, enough to rebuild it."""
    ss = derive(seed, *key)
    return {"entropy": int(ss.entropy), "spawn_key": [int(k) for k in ss.spawn_key]}
