"""Seed derivation for reproducible, scheduling-independent random streams."""

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x):
    """One round of the splitmix64 finaliser on a 64-bit integer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(master_seed, *keys):
    """Mix a master seed with a sequence of integer keys into a 64-bit seed.

    ``derive_seed(s, k)`` is the stream seed of task ``k``; extra keys select
    sub-streams (e.g. the forward and backward halves of a two-sided walk).
    """
    h = splitmix64(int(master_seed) & _MASK)
    for k in keys:
        h = splitmix64(h ^ (int(k) & _MASK))
    return h


def make_rng(master_seed, *keys):
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, *keys)))
