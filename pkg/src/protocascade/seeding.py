"""Counter-based seed derivation.

A stream is addressed by ``(master, *keys)``; keys may be strings or
non-negative integers. Streams never depend on how many siblings exist, so
adding replicates leaves existing ones untouched.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    k = int(k)
    if k < 0:
        raise ValueError("integer stream keys must be non-negative")
    return k


def derive_seed(master: int, *keys) -> int:
    """64-bit integer seed for the stream ``(master, *keys)``."""
    ss = np.random.SeedSequence(int(master) & (2**128 - 1), spawn_key=tuple(_key(k) for k in keys))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def derive_rng(master: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))
