"""Deterministic derivation of child seeds from a parent seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def derive_seed(seed: int, *keys) -> int:
    """Return a 63-bit integer seed that depends only on ``seed`` and ``keys``.

    Keys may be ints or strings; strings are hashed with CRC32 so the result is
    stable across interpreter runs.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def rng_for(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
