"""
Seeded random streams.

Every stream is numpy's Philox (a counter-based, splittable generator), so
the same seed gives the same draws on every platform. Child streams and
per-sample seeds are derived through ``SeedSequence`` hashing, which keeps
independent consumers from interfering with one another.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

ALGORITHM = "philox4x64"

SeedKey = Union[int, str]


def _key_to_int(key: SeedKey) -> int:
    if isinstance(key, str):
        # stable across processes, unlike hash()
        return int.from_bytes(key.encode("utf-8")[:16].ljust(16, b"\0"), "little") ^ len(key)
    return int(key)


def derive_seed(seed: int, *keys: SeedKey) -> int:
    """Deterministic 64-bit seed for a named sub-stream, e.g. ``(seed, "train", 17)``."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


class RngStream:
    """A named, position-tracking random stream."""

    algorithm = ALGORITHM

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.position = 0
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed)))

    def _advance(self, shape: Union[int, Sequence[int], None]) -> None:
        self.position += int(np.prod(shape)) if shape is not None else 1

    def normal(self, mean: float = 0.0, std: float = 1.0, shape=None) -> np.ndarray:
        self._advance(shape)
        return self._gen.normal(mean, std, size=shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=None) -> np.ndarray:
        self._advance(shape)
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        self._advance(shape)
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        self._advance(n)
        return self._gen.permutation(n)

    def child(self, *keys: SeedKey) -> "RngStream":
        """Independent stream keyed by ``keys``; does not consume draws from this one."""
        return RngStream(derive_seed(self.seed, *keys))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, algorithm={self.algorithm}, position={self.position})"
