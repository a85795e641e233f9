"""Autonomous ODE systems and their reference trajectories.

Reference data are produced with an adaptive Dormand-Prince 5(4) pair and its
free 4th-order continuous extension for output at arbitrary times. Derivative
labels are evaluated from the right-hand side, never by differencing.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ArgumentError, DivergenceError, IntegrationError

RTOL = 1e-10
ATOL = 1e-12


@dataclass(frozen=True)
class AutonomousSystem:
    """``dx/dt = f(x; params)`` with no explicit time dependence.

    ``vector_field(x, params)`` must accept any array whose last axis has
    length ``dim`` and return an array of the same shape.
    """

    name: str
    dim: int
    params: Mapping[str, float]
    vector_field: Callable[[np.ndarray, Mapping[str, float]], np.ndarray]
    initial_state: tuple[float, ...]
    t_end: float
    n_points: int
    state_names: tuple[str, ...] = ()
    candidate_map: str = "identity"

    def __post_init__(self):
        if self.dim < 1:
            raise ArgumentError("dim must be >= 1")
        if len(self.initial_state) != self.dim:
            raise ArgumentError("initial_state length must equal dim")
        if not self.state_names:
            object.__setattr__(self, "state_names",
                               tuple(f"x{i + 1}" for i in range(self.dim)))
        if len(self.state_names) != self.dim:
            raise ArgumentError("need one state name per dimension")

    def rhs(self, x) -> np.ndarray:
        return self.vector_field(np.asarray(x, dtype=np.float64), self.params)

    def grid(self) -> np.ndarray:
        return uniform_grid(self.t_end, self.n_points)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    state_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        x = np.asarray(self.states, dtype=np.float64)
        dx = np.asarray(self.derivs, dtype=np.float64)
        if t.ndim != 1 or x.shape != dx.shape or x.shape[0] != t.shape[0]:
            raise ArgumentError("times, states and derivs have inconsistent shapes")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "derivs", dx)
        if not self.state_names:
            object.__setattr__(self, "state_names",
                               tuple(f"x{i + 1}" for i in range(x.shape[1])))

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return self.times.shape[0]

    def header(self) -> list[str]:
        return ["t", *self.state_names, *(f"d{n}" for n in self.state_names)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for row in np.column_stack((self.times, self.states, self.derivs)):
                w.writerow([format(v, ".17g") for v in row])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=np.float64).reshape(-1, len(rows[0]))
        k = (len(header) - 1) // 2
        return cls(body[:, 0], body[:, 1:1 + k], body[:, 1 + k:], tuple(header[1:1 + k]))


def uniform_grid(t_end: float, n_points: int) -> np.ndarray:
    """``n_points`` equally spaced times from 0 to ``t_end`` inclusive."""
    if n_points < 2:
        raise ArgumentError("n_points must be >= 2")
    if not t_end > 0:
        raise ArgumentError("t_end must be positive")
    return np.linspace(0.0, float(t_end), int(n_points))


# -- presets ------------------------------------------------------------------

def _type_a(x, p):
    return np.stack((p["a"] * x[..., 1], p["b"] * x[..., 0]), axis=-1)


def _type_b(x, p):
    return np.stack((x[..., 1] - p["a"] * x[..., 0],
                     p["b"] * x[..., 0] + p["c"] * x[..., 1]), axis=-1)


def _nonlinear(x, p):
    return np.stack((x[..., 0] - x[..., 1], x[..., 0] ** 2 - x[..., 1]), axis=-1)


def _lorenz(x, p):
    a, b, c = x[..., 0], x[..., 1], x[..., 2]
    return np.stack((p["sigma"] * (b - a),
                     a * (p["rho"] - c) - b,
                     a * b - p["beta"] * c), axis=-1)


PRESETS: dict[str, AutonomousSystem] = {
    "type-a": AutonomousSystem("type-a", 2, {"a": 0.3, "b": -0.7}, _type_a,
                               (1.0, 0.0), 50.0, 501),
    "type-b": AutonomousSystem("type-b", 2, {"a": 0.4, "b": -0.8, "c": 0.5}, _type_b,
                               (1.0, 0.0), 20.0, 201),
    "nonlinear": AutonomousSystem("nonlinear", 2, {}, _nonlinear,
                                  (0.5, 0.25), 20.0, 201),
    "lorenz": AutonomousSystem("lorenz", 3, {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0},
                               _lorenz, (-10.0, -10.0, 15.0), 2.5, 251,
                               state_names=("x", "y", "z"), candidate_map="lorenz"),
}


def get_system(name: str) -> AutonomousSystem:
    try:
        return PRESETS[name]
    except KeyError:
        raise ArgumentError(
            f"unknown system {name!r}; known: {', '.join(PRESETS)}") from None


# -- Dormand-Prince 5(4) ------------------------------------------------------

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# 5th-order minus embedded 4th-order weights, over all 7 stages (FSAL included)
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension: y(t + s h) = y + h * K^T P [s, s^2, s^3, s^4]
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])
_SAFETY, _MIN_FACTOR, _MAX_FACTOR = 0.9, 0.2, 10.0


def _rk_step(fun, y, f0, h):
    k = np.empty((7, y.shape[0]))
    k[0] = f0
    for s in range(1, 6):
        k[s] = fun(y + h * (_A[s] @ k[:s]))
    y_new = y + h * (_B @ k[:6])
    k[6] = fun(y_new)
    return y_new, k


def _initial_step(fun, y0, f0, rtol, atol):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    d2 = np.sqrt(np.mean(((fun(y1) - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def dopri5(fun, y0, t_eval, rtol=RTOL, atol=ATOL, fixed_step=None, max_step=math.inf,
           max_steps=200_000):
    """Integrate ``dy/dt = fun(y)`` from ``t_eval[0]`` and sample at ``t_eval``.

    With ``fixed_step`` the step size is held at that value (the last step is
    shortened to land on ``t_eval[-1]``) and no error control is applied.
    Returns the ``(len(t_eval), dim)`` array of states.
    """
    t_eval = np.asarray(t_eval, dtype=np.float64)
    y = np.array(y0, dtype=np.float64)
    out = np.empty((t_eval.shape[0], y.shape[0]))
    out[0] = y
    t0 = t = t_eval[0]
    t_final = t_eval[-1]
    f = fun(y)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(f))):
        raise DivergenceError(f"non-finite state or derivative at t={float(t)!r}", t)
    if fixed_step is not None:
        h = float(fixed_step)
    else:
        h = min(_initial_step(fun, y, f, rtol, atol), max_step)
    n_steps = 0
    next_out = 1
    blew_up = False
    while next_out < t_eval.shape[0]:
        if n_steps >= max_steps:
            raise IntegrationError(f"step budget of {max_steps} exhausted at t={float(t)!r}", t)
        if fixed_step is not None:
            t_new = min(t0 + (n_steps + 1) * fixed_step, t_final)
            h = t_new - t
        else:
            if not h >= 10 * np.finfo(float).eps * max(abs(t), 1.0):
                if blew_up:
                    raise DivergenceError(f"non-finite state after t={float(t)!r}", t)
                raise IntegrationError(f"step size underflow at t={float(t)!r}", t)
            if t + h >= t_final:
                h = t_final - t
            t_new = t + h
        y_new, k = _rk_step(fun, y, f, h)
        blew_up = not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(k)))
        if blew_up:
            if fixed_step is not None:
                raise DivergenceError(f"non-finite state after t={float(t)!r}", t)
            h *= _MIN_FACTOR
            continue
        if fixed_step is None:
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = np.sqrt(np.mean((h * (_E @ k) / scale) ** 2))
            if err > 1.0:
                h *= max(_MIN_FACTOR, _SAFETY * err ** -0.2)
                continue
            factor = _MAX_FACTOR if err == 0 else min(_MAX_FACTOR, _SAFETY * err ** -0.2)
        # accepted: emit every requested time in (t, t_new]
        q = None
        while next_out < t_eval.shape[0] and t_eval[next_out] <= t_new:
            te = t_eval[next_out]
            if te == t_new:
                out[next_out] = y_new
            else:
                if q is None:
                    q = k.T @ _P
                s = (te - t) / h
                out[next_out] = y + h * (q @ (s ** np.arange(1, 5)))
            next_out += 1
        t, y, f = t_new, y_new, k[6]
        n_steps += 1
        if fixed_step is None:
            h = min(h * factor, max_step)
    return out


def integrate_reference(system: AutonomousSystem, times=None, rtol=RTOL, atol=ATOL,
                        fixed_step=None) -> Trajectory:
    """Solve the initial value problem from ``times[0]`` and label derivatives.

    ``times`` defaults to the system's own uniform grid.
    """
    t = system.grid() if times is None else np.asarray(times, dtype=np.float64)
    if t.ndim != 1 or t.shape[0] < 1:
        raise ArgumentError("times must be a non-empty 1-D sequence")
    if t[0] < 0 or np.any(np.diff(t) <= 0):
        raise ArgumentError("times must start at t >= 0 and be strictly increasing")
    states = dopri5(system.rhs, system.initial_state, t, rtol, atol, fixed_step)
    return Trajectory(t, states, system.rhs(states), system.state_names)
