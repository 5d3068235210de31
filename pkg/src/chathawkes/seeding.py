"""Named random sub-streams derived from one run seed."""

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the stream `name` of run `seed`; stable across processes."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])
