"""Deterministic, label-addressable random streams."""

from __future__ import annotations

import hashlib

import numpy as np


class Rng:
    """Seeded random stream with independent named child streams.

    A child stream is derived from (seed, label) alone, so the numbers it
    produces never depend on how much the parent or any sibling stream has
    already consumed. The underlying generator is PCG64, which is
    reproducible across platforms for a fixed seed.
    """

    def __init__(self, seed: int, _key: bytes | None = None):
        self.seed = int(seed)
        if _key is None:
            _key = hashlib.sha256(b"fedlfd/" + str(self.seed).encode("ascii")).digest()
        self._key = _key
        self._generator: np.random.Generator | None = None

    def child(self, label: str) -> "Rng":
        """Derive an independent stream addressed by ``label``."""
        key = hashlib.sha256(self._key + b"/" + label.encode("utf-8")).digest()
        return Rng(self.seed, _key=key)

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            state = int.from_bytes(self._key[:16], "little")
            self._generator = np.random.Generator(np.random.PCG64(state))
        return self._generator

    # Thin delegation; keeps call sites free of .generator noise.
    def random(self, size=None):
        return self.generator.random(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def choice(self, a, size=None, replace=True, p=None):
        return self.generator.choice(a, size=size, replace=replace, p=p)

    def permutation(self, x):
        return self.generator.permutation(x)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, key={self._key[:4].hex()}...)"
