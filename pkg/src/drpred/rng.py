"""Splittable seeded random number generation.

One root generator is created per run/session from the user seed; every
stochastic component draws from a child split off the root, so adding a
new consumer never perturbs the streams of existing ones.
"""

from __future__ import annotations

import numpy as np


class SplitRng:
    """A seeded numpy generator that can spawn independent children."""

    def __init__(self, seed_or_seq):
        if isinstance(seed_or_seq, np.random.SeedSequence):
            self._seq = seed_or_seq
        else:
            self._seq = np.random.SeedSequence(int(seed_or_seq))
        self.gen = np.random.Generator(np.random.PCG64(self._seq))

    def split(self) -> "SplitRng":
        """Spawn a child generator with an independent stream."""
        (child,) = self._seq.spawn(1)
        return SplitRng(child)

    # Convenience passthroughs used throughout the code base.
    def uniform(self, low, high, size, dtype=np.float32):
        return self.gen.uniform(low, high, size).astype(dtype)

    def normal(self, size, dtype=np.float32):
        return self.gen.standard_normal(size).astype(dtype)

    def permutation(self, n) -> np.ndarray:
        return self.gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)
