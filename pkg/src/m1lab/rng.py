"""Counter-based random streams.

Every stochastic component draws from a Philox generator keyed by
(seed, replicate, stream). Stream 0 carries the noise shared by all
particles of a replicate; stream i >= 1 is private to particle i. Keying
(rather than jumping a sequential state) makes every stream reproducible
in isolation, so results are bitwise independent of worker count and the
shared stream is identical across runs that differ only in N.
"""

from __future__ import annotations

import numpy as np

_U32 = 1 << 32
_U64 = 1 << 64


def stream(seed: int, replicate: int, index: int) -> np.random.Generator:
    """Return the Philox generator for (seed, replicate, index)."""
    if not 0 <= int(seed) < _U64:
        raise ValueError("seed must fit in 64 bits")
    if not 0 <= int(replicate) < _U32:
        raise ValueError("replicate must fit in 32 bits")
    if not 0 <= int(index) < _U32:
        raise ValueError("stream index must fit in 32 bits")
    key = np.array([seed, (int(replicate) << 32) | int(index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
