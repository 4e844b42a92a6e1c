"""Seed derivation and per-worker random streams.

Seed derivation is a fixed 64-bit function so that replicate streams can be
produced independently by any worker::

    fmix(z) = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
              z ^= z >> 27; z *= 0x94D049BB133111EB
              z ^= z >> 31
    mix(seed, r) = fmix(fmix(seed + 0x9E3779B97F4A7C15)
                        ^ ((r + 1) * 0xD1B54A32D192ED03))

with all arithmetic modulo 2**64. A stream seeded with ``x`` is a
xoshiro256** generator whose four state words are the first four SplitMix64
outputs starting from ``x``.
"""

import numpy as np

from . import _kernels as K

MASK64 = (1 << 64) - 1


def _fmix(z):
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix(seed, r):
    """Derive the seed of replicate ``r`` from a base ``seed``.

    Pure-Python reference of the compiled version; both reduce their inputs
    modulo 2**64.
    """
    h = _fmix((seed + 0x9E3779B97F4A7C15) & MASK64)
    return _fmix(h ^ (((r + 1) * 0xD1B54A32D192ED03) & MASK64))


def mix_many(seed, count, start=0):
    """Vector of ``mix(seed, r)`` for r in ``range(start, start + count)``."""
    return np.array([mix(seed, r) for r in range(start, start + count)], dtype=np.uint64)


def as_seed(value):
    return np.uint64(int(value) & MASK64)


class Stream:
    """A xoshiro256** stream owned by exactly one worker."""

    def __init__(self, seed):
        self.seed = int(seed) & MASK64
        self.state = np.empty(4, dtype=np.uint64)
        K.seed_state(as_seed(self.seed), self.state)

    def uniform(self):
        return K.uniform(self.state)

    def normal(self):
        return K.normal(self.state)

    def gamma(self, shape):
        return K.gamma(self.state, float(shape))

    def beta(self, a, b):
        return K.beta(self.state, float(a), float(b))

    def __repr__(self):
        return f"Stream(seed={self.seed})"
