"""Seed handling.

All randomness in this package flows through PCG64 (O'Neill's permuted
congruential generator) seeded via numpy's SeedSequence, so any dataset or
training run is reproducible from the integer seeds alone.  Streams for
sub-tasks are derived by extending the entropy tuple, never by drawing and
re-seeding.
"""

from __future__ import annotations

import numpy as np


def check_seed(seed: int, name: str = "seed") -> int:
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {seed!r}")
    return int(seed)


def rng_from(*entropy: int) -> np.random.Generator:
    """Deterministic generator from a tuple of non-negative integers."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(tuple(entropy))))
