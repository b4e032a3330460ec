"""Counter-keyed random streams.

Every stochastic step draws from a generator keyed by (master seed, *keys), so
results do not depend on execution order or thread count.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)


def stream(seed: int, *keys) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.default_rng(ss)
