"""Counter-based deterministic random numbers.

Algorithm (a fixed constant of this package): every draw builds a fresh
Philox-4x64 generator keyed by ``(counter << 64) | seed`` and then advances
``counter`` by one. A draw therefore depends only on ``(seed, counter)`` and
the requested shape, never on thread scheduling or on previous draw sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass
class Rng:
    seed: int
    counter: int = 0

    def __post_init__(self) -> None:
        self.seed = int(self.seed) & _MASK64
        self.counter = int(self.counter) & _MASK64

    def _next(self) -> np.random.Generator:
        key = (self.counter << 64) | self.seed
        self.counter = (self.counter + 1) & _MASK64
        return np.random.Generator(np.random.Philox(key=key))

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._next().standard_normal(shape) * scale

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0):
        out = self._next().random(shape)
        return low + (high - low) * out if shape is not None else float(low + (high - low) * out)

    def integers(self, low: int, high: int, shape=None):
        return self._next().integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._next().permutation(n)

    def fork(self, *tags: int) -> Rng:
        """Independent child stream derived from ``(seed, tags)``; leaves ``self`` untouched."""
        state = np.random.SeedSequence([self.seed, *[int(t) & _MASK64 for t in tags]]).generate_state(
            2, np.uint32
        )
        return Rng(int(state[0]) | (int(state[1]) << 32))

    def at(self, counter: int) -> Rng:
        """Copy of this stream positioned at ``counter``."""
        return Rng(self.seed, counter)
