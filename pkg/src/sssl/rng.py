"""Seeded random stream used by dropout, mixup and shuffling.

All stochastic pieces of the pipeline draw from one RngState so that a
fixed seed yields bit-identical runs in single-threaded mode.
"""

from __future__ import annotations

import numpy as np


class RngState:
    """Deterministic random stream identified by a 64-bit seed.

    ``counter`` counts draw calls since construction; it is informational
    (useful when diffing two runs) and does not participate in the stream.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.counter = 0
        self._gen = np.random.default_rng(self.seed)

    def _tick(self) -> None:
        self.counter += 1

    def uniform(self, size=None) -> np.ndarray:
        self._tick()
        return self._gen.random(size)

    def normal(self, size=None) -> np.ndarray:
        self._tick()
        return self._gen.standard_normal(size)

    def beta(self, a: float, b: float, size=None) -> np.ndarray:
        self._tick()
        return self._gen.beta(a, b, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        self._tick()
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        self._tick()
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        self._tick()
        return self._gen.choice(n, size=size, replace=replace)

    def spawn(self) -> "RngState":
        """Child stream with a seed derived from this one (one draw)."""
        self._tick()
        return RngState(int(self._gen.integers(0, 2**63 - 1)))
