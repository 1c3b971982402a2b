"""Seeded random streams. PCG64 is the only generator used anywhere in the package."""

from enum import IntEnum

import numpy as np

BIT_GENERATOR = "PCG64"
_SEED_MASK = (1 << 64) - 1


class Stream(IntEnum):
    """Substream identifiers; distinct ids never share draws for the same seed"""
    TRAJECTORY = 0
    SGDT = 1
    NOISE = 2
    GRAPH = 3
    CYCLES = 4
    AR_SETUP = 5
    AR_NOISE = 6
    AR_EVAL = 7
    DATASET = 8
    SAMPLING = 9
    SURROGATE = 10


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for (seed, *stream). Same key, same draws, on every platform."""
    entropy = [int(seed) & _SEED_MASK] + [int(s) for s in stream]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
