"""Deterministic random-stream derivation.

All randomness flows from one 64-bit master seed.  A named substream is
derived as ``SeedSequence([master, crc32(label_0), crc32(label_1), ...])``,
so the same (seed, labels) pair yields the same generator on every platform
and independent labels yield statistically independent streams.  Replicas
are vectorized inside one stream rather than split per replica.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_entropy(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def substream(seed: int, *labels) -> np.random.Generator:
    """Generator for the substream named by ``labels`` under ``seed``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_label_entropy(x) for x in labels]
    return np.random.default_rng(np.random.SeedSequence(entropy))
