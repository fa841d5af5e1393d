"""Deterministic seed derivation.

All randomness in the package flows through numpy Generators constructed
from explicit 64-bit seeds.  Child seeds are derived with SeedSequence so a
single master seed fans out into independent, reproducible streams; the
derivation is a pure function of (master, key path) and stable across runs.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive_seed", "rng_from"]


def derive_seed(master: int, *key: int) -> int:
    """Return a 64-bit child seed for the given master seed and key path."""
    if master < 0:
        raise ValueError("master seed must be non-negative")
    ss = np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_from(seed: int) -> np.random.Generator:
    """Generator seeded with a fixed 64-bit seed (pure function of seed)."""
    return np.random.Generator(np.random.PCG64(int(seed)))
