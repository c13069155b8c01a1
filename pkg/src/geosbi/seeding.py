"""Named random sub-streams derived from one global seed."""

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.SeedSequence:
    """Independent stream for component ``name``; stable across runs and platforms."""
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])


def generator(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(substream(seed, name))
