"""Deterministic random streams.

Every stochastic component (weight init, dropout, score noise, shuffling)
draws from an RngStream so that a run is a pure function of its seed.
"""

from __future__ import annotations

import hashlib

import numpy as np

_ALGORITHM = "pcg64"


class RngStream:
    """Seeded PCG64 stream; identical seeds give identical draws on any platform."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.algorithm = _ALGORITHM
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, std, size=shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=None):
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, options, size=None, replace=True, p=None):
        return self._gen.choice(options, size=size, replace=replace, p=p)

    def spawn(self, key: str) -> "RngStream":
        """Derive an independent child stream; stable across runs and platforms."""
        digest = hashlib.sha256(f"{self.seed}/{key}".encode()).digest()
        return RngStream(int.from_bytes(digest[:8], "big"))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, algorithm={self.algorithm!r})"
