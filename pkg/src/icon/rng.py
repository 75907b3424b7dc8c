"""Named counter-based random streams built on numpy's Philox generator.

Every source of randomness in the package draws from a stream identified by
(seed, name). A stream hands out generators addressed by integer counters,
so the numbers produced at counter (i, j, ...) never depend on how many
draws happened elsewhere. That is what makes restart candidates, resumed
runs, and re-jittered batches replayable.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key128(seed: int, name: str) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return np.frombuffer(digest[:16], dtype=np.uint64)


class Stream:
    """A named family of Philox generators addressed by counters."""

    def __init__(self, seed: int, name: str):
        self.seed = seed
        self.name = name
        self._key = _key128(seed, name)

    def at(self, *counters: int) -> np.random.Generator:
        """Generator for a counter address; pure function of (seed, name, counters)."""
        if len(counters) > 4:
            raise ValueError("at most 4 counter components")
        counter = np.zeros(4, dtype=np.uint64)
        for i, c in enumerate(counters):
            counter[i] = np.uint64(c & 0xFFFFFFFFFFFFFFFF)
        bitgen = np.random.Philox(counter=counter, key=self._key)
        return np.random.Generator(bitgen)


def stream(seed: int, name: str) -> Stream:
    return Stream(seed, name)


_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + _GOLDEN).astype(np.uint64)
    x = (x ^ (x >> np.uint64(30))) * _MIX1
    x = (x ^ (x >> np.uint64(27))) * _MIX2
    return x ^ (x >> np.uint64(31))


def hash_uniform(*parts) -> np.ndarray:
    """Vectorized counter hash to uniforms in [0, 1).

    Each part is an integer or an integer array; parts broadcast together.
    The result at any index is a pure function of the part values there,
    independent of the shape of the batch it was computed in.
    """
    with np.errstate(over="ignore"):
        acc = np.zeros(np.broadcast_shapes(*(np.shape(p) for p in parts)), dtype=np.uint64)
        for p in parts:
            acc = _splitmix64(acc ^ np.asarray(p, dtype=np.uint64))
    return (acc >> np.uint64(11)).astype(np.float64) / float(1 << 53)
