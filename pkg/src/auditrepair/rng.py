"""Named, reproducible random streams.

Every sampler draws from ``stream(seed, name, *extra)``; the same
arguments always give the same generator and distinct names never share
state, so adding a new sampler cannot shift the draws of an existing one.
"""

import zlib

import numpy as np


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())]
    key.extend(int(e) for e in extra)
    return np.random.default_rng(np.random.SeedSequence(key))


def child_seed(seed: int, name: str, *extra: int) -> int:
    """A 63-bit integer seed for code that wants a plain int (e.g. numba)."""
    return int(stream(seed, name, *extra).integers(0, 2**63 - 1))
