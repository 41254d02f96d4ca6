"""Seeded, counter-based random streams.

Draws come from numpy's Philox counter generator; Gaussians use Box-Muller on
its uniforms so the sequence depends only on the seed.
"""
from __future__ import annotations

import zlib

import numpy as np

from ..errors import ContractError


class Rng:
    def __init__(self, seed: int, stream: tuple[int, ...] = ()) -> None:
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = tuple(int(s) for s in stream)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"

    def split(self, key: int | str) -> "Rng":
        """Independent child stream; the same key always yields the same child."""
        if isinstance(key, str):
            key = zlib.crc32(key.encode("utf-8"))
        return Rng(self.seed, self.stream + (int(key) & 0xFFFFFFFF,))

    def uniform(self, size) -> np.ndarray:
        return self._gen.random(size)

    def gaussian(self, rows: int, cols: int) -> np.ndarray:
        if rows < 1 or cols < 1:
            raise ContractError(f"gaussian sample needs rows, cols >= 1, got {rows}x{cols}")
        count = rows * cols
        half = (count + 1) // 2
        u1 = 1.0 - self._gen.random(half)  # (0, 1]
        u2 = self._gen.random(half)
        radius = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([radius * np.cos(2.0 * np.pi * u2),
                            radius * np.sin(2.0 * np.pi * u2)])
        return z[:count].reshape(rows, cols)

    def integers(self, high: int, size) -> np.ndarray:
        return self._gen.integers(0, high, size=size)

    def choice(self, values: np.ndarray, size: int, p: np.ndarray | None = None) -> np.ndarray:
        return self._gen.choice(values, size=size, replace=True, p=p)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def sample_gaussian(rng: Rng, rows: int, cols: int) -> np.ndarray:
    return rng.gaussian(rows, cols)
