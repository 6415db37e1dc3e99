"""Seeded random streams.

All randomness in the package flows through PCG64 generators keyed by a
user seed plus an integer path, so independent purposes (price draws,
factor draws, per-fold pricing starts, ...) consume disjoint streams:
changing how many numbers one purpose draws never perturbs another.
"""

from __future__ import annotations

import numpy as np

BIT_GENERATOR = "PCG64"


def stream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the stream identified by ``seed`` and an integer path."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(path)))
    )


def substream_seed(seed: int, *path: int) -> int:
    """Derived integer seed, for APIs that take a seed rather than a stream."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
