"""Deterministic seed derivation.

Every random draw in the package goes through a ``numpy.random.Generator``
built from a master seed and a tuple of labels, so that independent jobs
(realizations, arms, replicates) get decorrelated streams regardless of the
order in which they are executed.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key_word(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("seed keys must be non-negative")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def derive_seed(master: int, *keys) -> int:
    """Return a 63-bit integer seed for ``(master, *keys)``."""
    lo, hi = _sequence(master, keys).generate_state(2, dtype=np.uint32)
    return (int(lo) | (int(hi) << 32)) >> 1


def _sequence(master: int, keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master), spawn_key=tuple(_key_word(k) for k in keys))


def rng(master: int, *keys) -> np.random.Generator:
    return np.random.default_rng(_sequence(master, keys))
