"""Deterministic seed derivation.

Every stochastic component takes an explicit 64-bit seed. Derived seeds
(per subject, per round, per sample) are produced by folding indices into
the base seed with the splitmix64 finalizer, so datasets are reproducible
and safely parallelizable: sample k gets the same stream no matter which
worker renders it.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 step: advance-and-finalize of a 64-bit state."""
    x = (x + _GOLDEN) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix_seed(base: int, *parts: int) -> int:
    """Fold integer indices into ``base``, returning a well-mixed 64-bit seed."""
    s = splitmix64(base & _MASK)
    for p in parts:
        s = splitmix64(s ^ ((p & _MASK) * _GOLDEN & _MASK))
    return s


def make_rng(seed: int, *parts: int) -> np.random.Generator:
    """Generator seeded from ``mix_seed(seed, *parts)``."""
    return np.random.Generator(np.random.PCG64(mix_seed(seed, *parts)))
