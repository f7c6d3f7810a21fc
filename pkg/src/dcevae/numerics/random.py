from __future__ import annotations

import numpy as np


class Rng:
    """Seeded generator (PCG64). Same seed, same draw sequence."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def child(self, tag: int) -> "Rng":
        """Independent stream derived from this seed and ``tag``."""
        return Rng(int(np.random.SeedSequence([self.seed, tag]).generate_state(1)[0]))


def gaussian_sample(rng: Rng, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError(f"gaussian_sample needs n >= 1, got {n}")
    return rng.normal(n)
