"""Seeded random streams.

Every stochastic step draws from its own numpy ``PCG64`` stream keyed by
``(seed, tag, ...)`` through ``SeedSequence``, so results do not depend on
call order or scheduling.
"""
from __future__ import annotations

import zlib

import numpy as np

PRNG_NAME = "numpy.random.PCG64 via SeedSequence([seed, crc32(tag), ...])"


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def make_rng(seed: int, *tags) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key(t) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
