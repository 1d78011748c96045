"""Seeded deterministic random numbers for every stochastic choice.

One generator family is used everywhere: numpy's Philox 4x64 counter-based
bit generator. Given the same 64-bit seed the sample stream is bit-identical
across runs and platforms, which makes byte-compare reproducibility tests
possible. Independent sub-streams are derived by packing (seed, stream id)
into the 128-bit Philox key.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


class Rng:
    """Philox-keyed generator; all draws are functions of (seed, stream)."""

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0:
            raise ValueError("seed must be a non-negative integer")
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = (self.seed << 64) | self.stream
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, stream: int) -> "Rng":
        """Fresh generator on an independent sub-stream of the same seed."""
        return Rng(self.seed, stream)

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, std, size=shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
