"""Named random streams derived from one master seed.

Every stream is ``SeedSequence([master, crc32(tag), *keys])`` so that, e.g.,
client 3's minibatch draws in round 7 never depend on how many numbers any
other component consumed.
"""
import zlib

import numpy as np


def stream(master: int, tag: str, *keys: int) -> np.random.Generator:
    entropy = [int(master), zlib.crc32(tag.encode("utf-8"))] + [int(k) for k in keys]
    if any(e < 0 for e in entropy):
        raise ValueError("seeds and stream keys must be non-negative")
    return np.random.default_rng(np.random.SeedSequence(entropy))
