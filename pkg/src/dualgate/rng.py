"""Counter-based random streams.

Every consumer of randomness derives a 64-bit stream id from the run seed
and its own coordinates (epoch, sample index, block, ...). A generator is
keyed by ``seed ^ stream_id`` so no state is shared between streams.
"""
import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def stream_id(*parts: int) -> int:
    """Hash integer coordinates into one 64-bit stream id."""
    h = 0
    for part in parts:
        h = splitmix64(h ^ (int(part) & _MASK))
    return h


def generator(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(int(seed) ^ int(stream)) & _MASK))
