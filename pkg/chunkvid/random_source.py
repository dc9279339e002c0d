"""
Counter-based, splittable random streams.

A RandomSource wraps numpy's Philox generator seeded from a SeedSequence
whose spawn key is the stream path, so `rng.stream("noise", chunk, frame)`
gives the same draws on every run and platform regardless of what other
streams were consumed first.
"""

import hashlib
from typing import Union

import numpy as np

Key = Union[int, str]

_UINT64 = (1 << 64) - 1


def _key_word(key: Key) -> int:
    if isinstance(key, str):
        return int.from_bytes(hashlib.blake2b(key.encode("utf-8"), digest_size=4).digest(), "little")
    if key < 0:
        raise ValueError(f"stream keys must be non-negative, got {key}")
    return int(key)


class RandomSource:
    """Deterministic random stream identified by (seed, key path)."""

    def __init__(self, seed: int, key: tuple = ()):
        self.seed = int(seed) & _UINT64
        self.key = tuple(_key_word(k) for k in key)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(sequence))

    def stream(self, *key: Key) -> "RandomSource":
        """Independent child stream; does not advance this one."""
        return RandomSource(self.seed, self.key + tuple(key))

    @property
    def counter(self) -> int:
        state = self._gen.bit_generator.state["state"]["counter"]
        return int(sum(int(w) << (64 * i) for i, w in enumerate(state)))

    # -- draws --------------------------------------------------------------

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(size=shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def sample_distinct(self, population: int, count: int) -> np.ndarray:
        """`count` distinct integers from [0, population), ascending."""
        count = min(count, population)
        if count <= 0:
            return np.zeros(0, dtype=np.int64)
        return np.sort(self._gen.choice(population, size=count, replace=False))

    def __repr__(self) -> str:
        return f"RandomSource(seed={self.seed}, key={self.key})"
