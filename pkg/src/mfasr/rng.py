"""Deterministic random streams.

All randomness in the toolkit flows through :class:`Rng`, a thin wrapper
around numpy's counter-based Philox generator keyed by a SeedSequence.
Identical seeds produce identical streams on every platform, and
``split`` derives statistically independent child streams so that worker
or per-image streams do not depend on consumption order.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Splittable deterministic random generator."""

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = _path
        ss = np.random.SeedSequence(self.seed, spawn_key=_path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def split(self, index: int) -> "Rng":
        """Derive an independent child stream; same (seed, path) => same child."""
        return Rng(self.seed, self._path + (int(index),))

    def normal(self, loc=0.0, scale=1.0, size=None, dtype=np.float32):
        return np.asarray(self._gen.normal(loc, scale, size)).astype(dtype, copy=False)

    def uniform(self, low=0.0, high=1.0, size=None, dtype=np.float32):
        return np.asarray(self._gen.uniform(low, high, size)).astype(dtype, copy=False)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, seq):
        return seq[int(self._gen.integers(0, len(seq)))]

    def shuffle(self, items: list) -> None:
        self._gen.shuffle(items)
