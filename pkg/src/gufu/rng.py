"""Deterministic RNG streams derived from a base seed plus string/int tags.

Every stochastic step in the package draws from a Generator obtained here,
so a run is fully determined by its base seed and the order of operations.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["derive_rng"]


def _tag_value(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def derive_rng(seed: int, *tags) -> np.random.Generator:
    """A PCG64 generator keyed by (seed, *tags); stable across processes."""
    keys = [int(seed) & 0xFFFFFFFF] + [_tag_value(t) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(keys)))
