"""Seed handling.

Every stochastic routine takes an integer seed. Child seeds are derived
through :class:`numpy.random.SeedSequence` spawn keys, so the value for a
given (seed, key...) path never depends on evaluation order or worker count.
"""

from __future__ import annotations

import numpy as np


def derive_seed(seed: int, *keys: int) -> int:
    """Return a 63-bit integer seed for the child identified by ``keys``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    state = ss.generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    if keys:
        seed = derive_seed(seed, *keys)
    return np.random.default_rng(int(seed))
