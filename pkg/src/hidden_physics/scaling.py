"""Affine non-dimensionalisation of trajectories.

States map as ``x~ = (x - c) / s`` and time as ``t~ = t / T``, so derivatives
pick up the chain-rule factor ``dx~/dt~ = (T / s) dx/dt``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import Trajectory


@dataclass(frozen=True)
class ScalingSpec:
    center: tuple[float, ...]
    scale: tuple[float, ...]
    time_scale: float = 1.0

    @classmethod
    def identity(cls, dim: int) -> "ScalingSpec":
        return cls((0.0,) * dim, (1.0,) * dim, 1.0)

    @property
    def is_identity(self) -> bool:
        return (all(c == 0.0 for c in self.center) and all(s == 1.0 for s in self.scale)
                and self.time_scale == 1.0)

    @property
    def deriv_factor(self) -> np.ndarray:
        """``T / s_i`` per state."""
        return self.time_scale / np.asarray(self.scale)

    def scale_times(self, t):
        return np.asarray(t, dtype=np.float64) / self.time_scale

    def unscale_times(self, t):
        return np.asarray(t, dtype=np.float64) * self.time_scale

    def scale_states(self, x):
        return (np.asarray(x, dtype=np.float64) - np.asarray(self.center)) / np.asarray(self.scale)

    def unscale_states(self, x):
        return np.asarray(x, dtype=np.float64) * np.asarray(self.scale) + np.asarray(self.center)

    def scale_derivs(self, dx):
        return np.asarray(dx, dtype=np.float64) * self.deriv_factor

    def unscale_derivs(self, dx):
        return np.asarray(dx, dtype=np.float64) / self.deriv_factor

    def apply(self, traj: Trajectory) -> Trajectory:
        return Trajectory(self.scale_times(traj.times), self.scale_states(traj.states),
                          self.scale_derivs(traj.derivs), traj.state_names)

    def invert(self, traj: Trajectory) -> Trajectory:
        return Trajectory(self.unscale_times(traj.times), self.unscale_states(traj.states),
                          self.unscale_derivs(traj.derivs), traj.state_names)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "scale": list(self.scale),
                "time_scale": self.time_scale}

    @classmethod
    def from_dict(cls, doc: dict) -> "ScalingSpec":
        return cls(tuple(doc["center"]), tuple(doc["scale"]), doc["time_scale"])


def fit_scaling(traj: Trajectory, time_scale: float | None = None,
                observed=None) -> ScalingSpec:
    """Min-max map of every state onto [-1, 1] and of time onto [0, 1].

    A state that never changes keeps unit scale. ``time_scale`` replaces the
    default time unit (the trajectory's end time) with a fixed one.
    ``observed`` is an optional per-state mask: unobserved states get center 0
    and scale 1, so their data cannot leak into training or predictions.
    """
    lo, hi = traj.states.min(axis=0), traj.states.max(axis=0)
    center = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo)
    scale = np.where(half > 0, half, 1.0)
    if observed is not None:
        seen = np.asarray(observed, dtype=float) != 0
        center = np.where(seen, center, 0.0)
        scale = np.where(seen, scale, 1.0)
    if time_scale is None:
        t_span = traj.times[-1]
        time_scale = t_span if t_span > 0 else 1.0
    return ScalingSpec(tuple(float(c) for c in center), tuple(float(s) for s in scale),
                       float(time_scale))


def nondimensionalize(traj: Trajectory, time_scale: float | None = None
                      ) -> tuple[Trajectory, ScalingSpec]:
    spec = fit_scaling(traj, time_scale)
    return spec.apply(traj), spec
