"""
Deterministic random streams derived from the experiment seed
"""
import zlib

import numpy as np


def derive_rng(seed: int, stream: str, *keys: int) -> np.random.Generator:
    """Generator keyed by (seed, stream name, keys...), independent of call order"""
    entropy = [seed & 0xFFFFFFFF, zlib.crc32(stream.encode())] + [int(k) & 0xFFFFFFFF for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
