"""Seeded random streams with stable named substreams.

Every stochastic consumer (env resets, policy sampling, estimator noise,
weight init, ...) draws from its own substream so adding draws in one place
never perturbs another. Substreams are derived from the root seed plus a
CRC32 fold of the label path, which is stable across processes and platforms.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


class Rng:
    """PCG64 generator addressed by (seed, label path)."""

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        entropy = [self.seed] + [_label_int(p) for p in self.path]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def substream(self, *labels) -> "Rng":
        return Rng(self.seed, self.path + tuple(labels))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def gumbel01(self, size=None):
        # -log(-log u) with u ~ U(0,1); the open interval keeps both logs finite.
        u = self._gen.uniform(0.0, 1.0, size)
        u = np.clip(u, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).epsneg)
        return -np.log(-np.log(u))

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)
