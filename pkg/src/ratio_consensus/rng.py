"""Seeded counter-based random streams (Philox)."""
from __future__ import annotations

import numpy as np


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def spawn_rngs(seed, count: int) -> list[np.random.Generator]:
    """Independent child streams; replica ``r`` always gets the same stream for a given seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.Generator(np.random.Philox(child)) for child in children]
