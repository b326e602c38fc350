"""Counter-based random streams.

All randomness in a run derives from one 64-bit seed.  A stream is addressed
by ``(chain, step, purpose)`` and realized as a Philox generator whose key is
``(seed, chain)`` and whose counter starts at ``(0, 0, purpose, step)``.  Two
streams therefore never overlap unless a single stream draws 2**128 values,
and any chain can be simulated in any order or on any worker with identical
results.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

_MASK64 = (1 << 64) - 1


class Purpose(IntEnum):
    INIT = 1          # k_1 draw that seeds the reverse chain
    NOISE = 2         # Monte Carlo noise set for the score at one step
    BROWNIAN = 3      # reverse-SDE Brownian increment
    NOISE_PATH = 4    # per-chain noise paths (path-reuse mode)
    LANGEVIN = 5
    USER = 6          # free-standing draws (sample_noise, tests)


def stream(seed: int, chain: int = 0, step: int = 0, purpose: int = Purpose.USER) -> np.random.Generator:
    """Independent generator for one ``(chain, step, purpose)`` cell."""
    if chain < 0 or step < 0:
        raise ValueError("chain and step must be non-negative")
    key = [int(seed) & _MASK64, int(chain) & _MASK64]
    counter = [0, 0, int(purpose) & _MASK64, int(step) & _MASK64]
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an integer seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    return stream(int(rng))
