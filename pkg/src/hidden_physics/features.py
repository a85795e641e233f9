"""Candidate-feature maps fed to the dynamics network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError

MAP_KINDS = ("identity", "lorenz")


@dataclass(frozen=True)
class CandidateMap:
    """Expands a state batch ``(B, k)`` into candidate inputs ``(B, m)``.

    ``identity`` passes the states through (m = k). ``lorenz`` appends the
    cyclic pairwise products, ``(x, y, z) -> (x, y, z, xy, yz, zx)``.
    """

    kind: str
    in_dim: int

    def __post_init__(self):
        if self.kind not in MAP_KINDS:
            raise ArgumentError(f"unknown candidate map {self.kind!r}")
        if self.kind == "lorenz" and self.in_dim != 3:
            raise ArgumentError("lorenz candidate map needs 3 states")
        if self.in_dim < 1:
            raise ArgumentError("in_dim must be positive")

    @property
    def out_dim(self) -> int:
        return 6 if self.kind == "lorenz" else self.in_dim

    def _check(self, states) -> np.ndarray:
        x = np.asarray(states, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ArgumentError(f"expected states of shape (B, {self.in_dim}), got {x.shape}")
        return x

    def __call__(self, states) -> np.ndarray:
        x = self._check(states)
        if self.kind == "identity":
            return x
        a, b, c = x[:, 0], x[:, 1], x[:, 2]
        return np.column_stack((a, b, c, a * b, b * c, c * a))

    def vjp(self, states, grad) -> np.ndarray:
        """Pull a gradient on the features back onto the states."""
        x = self._check(states)
        g = np.asarray(grad, dtype=np.float64)
        if g.shape != (x.shape[0], self.out_dim):
            raise ArgumentError(f"feature gradient shape {g.shape} does not match")
        if self.kind == "identity":
            return g
        a, b, c = x[:, 0], x[:, 1], x[:, 2]
        return np.column_stack((
            g[:, 0] + g[:, 3] * b + g[:, 5] * c,
            g[:, 1] + g[:, 3] * a + g[:, 4] * c,
            g[:, 2] + g[:, 4] * b + g[:, 5] * a,
        ))


def candidate_features(feature_map: CandidateMap, states) -> np.ndarray:
    return feature_map(states)
