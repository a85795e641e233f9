"""Seeded random streams and Latin hypercube sampling of the time axis.

In one dimension a Latin hypercube is plain stratified sampling: split
``[lo, hi)`` into ``n`` equal strata, draw one uniform point in each, then
shuffle so the order carries no information.
"""
from __future__ import annotations

import zlib

import numpy as np

from .errors import ArgumentError

ALGORITHM = "PCG64"


class RngStream:
    """A named, seeded stream of random numbers.

    Substreams are derived from ``(seed, name)`` alone, so ``data``,
    ``collocation`` and ``init`` draws never perturb each other.
    """

    def __init__(self, seed: int = 0, name: str = "root", _key=()):
        if not 0 <= int(seed) < 2**64:
            raise ArgumentError("seed must fit in 64 unsigned bits")
        self.seed = int(seed)
        self.name = name
        self.algorithm = ALGORITHM
        self._key = tuple(_key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self._key)))
        self.counter = 0

    def substream(self, name: str) -> "RngStream":
        key = self._key + (zlib.crc32(name.encode("utf-8")),)
        return RngStream(self.seed, f"{self.name}/{name}", key)

    def uniform(self, size=None) -> np.ndarray:
        self.counter += 1
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        self.counter += 1
        return self._gen.permutation(n)

    def integers(self, high: int) -> int:
        self.counter += 1
        return int(self._gen.integers(high))

    def __repr__(self):
        return f"RngStream({self.algorithm}, seed={self.seed}, name={self.name!r}, counter={self.counter})"


def lhs_sample(n: int, lo: float, hi: float, rng: RngStream) -> np.ndarray:
    """One uniform draw per stratum ``[lo + i w, lo + (i+1) w)``, shuffled."""
    if n < 1:
        raise ArgumentError("n must be >= 1")
    if not lo < hi:
        raise ArgumentError(f"need lo < hi, got [{lo}, {hi}]")
    edges = lo + (hi - lo) * (np.arange(n + 1) / n)
    edges[-1] = hi
    left, right = edges[:-1], edges[1:]
    pts = left + rng.uniform(n) * (right - left)
    # guard the open upper edge of every stratum against rounding
    pts = np.minimum(pts, np.nextafter(right, -np.inf))
    return pts[rng.permutation(n)]


def resample_collocation(config, rng: RngStream, t_end: float) -> np.ndarray:
    """Fresh collocation times over ``[0, t_end)`` for one training step."""
    return lhs_sample(config.n_collocation, 0.0, t_end, rng)
