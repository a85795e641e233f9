"""Joint training of the state network ``t -> x`` and the dynamics network.

The total loss is the alpha-masked data misfit of the state network plus the
(never masked) equation residual ``d state/dt - dynamics(features(state))``
at collocation points. Each "epoch" is one full-batch Adam step.
"""
from __future__ import annotations

import ctypes
import ctypes.util
import functools
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .dynamics import Trajectory, get_system, integrate_reference
from .errors import ArgumentError, ConfigError, TrainingDivergedError
from .features import CandidateMap
from .metrics import ExperimentReport, build_report
from .sampling import RngStream, resample_collocation
from .scaling import ScalingSpec, fit_scaling

ADAM_DEFAULTS = {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8}

# architecture and schedule per preset system
_PRESET_NETS = {
    "type-a": ((64, 64), (64, 64)),
    "type-b": ((64, 64), (64, 64)),
    "nonlinear": ((64, 64), (64, 64)),
    "lorenz": ((128, 128), (128, 128, 128)),
}

# Lorenz time unit after scaling. Mapping [0, 2.5] onto [0, 1] leaves scaled
# derivatives near 35; a unit of 0.1 keeps their RMS below 0.6.
LORENZ_TIME_SCALE = 0.1


def preset_phases(system: str, alpha) -> tuple[tuple[int, float], ...]:
    if system != "lorenz":
        return ((25000, 1e-3),)
    if all(int(a) == 1 for a in alpha):
        return ((100000, 1e-3), (100000, 1e-4))
    return ((100000, 1e-3), (50000, 1e-4))


@dataclass(frozen=True)
class TrainingConfig:
    system: str
    alpha: tuple[int, ...]
    phases: tuple[tuple[int, float], ...]
    n_collocation: int = 1000
    seed: int = 0
    scaling: bool = False
    time_scale: float | None = None
    loss_target: float = 5e-4
    resample_every_step: bool = True
    state_hidden: tuple[int, ...] = (64, 64)
    dyn_hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    log_every: int = 100
    fast: bool = False

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(int(a) for a in self.alpha))
        object.__setattr__(self, "phases", tuple((int(e), float(lr)) for e, lr in self.phases))
        object.__setattr__(self, "state_hidden", tuple(int(h) for h in self.state_hidden))
        object.__setattr__(self, "dyn_hidden", tuple(int(h) for h in self.dyn_hidden))
        if self.time_scale is not None:
            object.__setattr__(self, "time_scale", float(self.time_scale))

    @property
    def total_steps(self) -> int:
        return sum(e for e, _ in self.phases)

    def validate(self) -> "TrainingConfig":
        try:
            system = get_system(self.system)
        except ArgumentError as exc:
            raise ConfigError("system", str(exc)) from None
        if len(self.alpha) != system.dim:
            raise ConfigError("alpha", f"needs {system.dim} entries, got {len(self.alpha)}")
        if any(a not in (0, 1) for a in self.alpha):
            raise ConfigError("alpha", "entries must be 0 or 1")
        if not any(self.alpha):
            raise ConfigError("alpha", "at least one state must contribute data")
        for epochs, lr in self.phases:
            if epochs < 0:
                raise ConfigError("phases", "epoch counts must be >= 0")
            if not lr > 0:
                raise ConfigError("phases", "learning rates must be positive")
        if self.time_scale is not None:
            if not (math.isfinite(self.time_scale) and self.time_scale > 0):
                raise ConfigError("time_scale", "must be a positive number or null")
        if self.n_collocation < 1:
            raise ConfigError("n_collocation", "must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must fit in 64 unsigned bits")
        if not self.loss_target > 0:
            raise ConfigError("loss_target", "must be positive")
        if self.log_every < 1:
            raise ConfigError("log_every", "must be >= 1")
        if self.activation not in ad.ACTIVATIONS:
            raise ConfigError("activation", f"must be one of {ad.ACTIVATIONS}")
        if any(h < 1 for h in self.state_hidden + self.dyn_hidden):
            raise ConfigError("state_hidden", "hidden widths must be positive")
        return self

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["alpha"] = list(self.alpha)
        doc["phases"] = [list(p) for p in self.phases]
        doc["state_hidden"] = list(self.state_hidden)
        doc["dyn_hidden"] = list(self.dyn_hidden)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainingConfig":
        """Build a config from a flat mapping; absent keys take preset values."""
        doc = dict(doc)
        if "system" not in doc:
            raise ConfigError("system", "missing")
        known = set(cls.__dataclass_fields__)
        for key in doc:
            if key not in known:
                raise ConfigError(key, "unknown key")
        try:
            base = preset_config(doc.pop("system"), doc.pop("alpha", None),
                                 fast=bool(doc.get("fast", False)))
            cfg = replace(base, **doc)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("config", str(exc)) from None
        return cfg.validate()


def fast_phases(phases) -> tuple:
    """Smoke-test schedule: every phase ten times shorter."""
    return tuple((int(e) // 10, lr) for e, lr in phases)


def preset_config(system: str, alpha=None, seed: int = 0, fast: bool = False) -> TrainingConfig:
    """Preset hyperparameters for a named system; ``fast`` cuts epochs tenfold."""
    try:
        sys_ = get_system(system)
    except ArgumentError as exc:
        raise ConfigError("system", str(exc)) from None
    alpha = tuple(alpha) if alpha is not None else (1,) * sys_.dim
    phases = preset_phases(system, alpha)
    if fast:
        phases = fast_phases(phases)
    state_hidden, dyn_hidden = _PRESET_NETS[system]
    return TrainingConfig(system=system, alpha=alpha, phases=phases, seed=seed,
                          scaling=(system == "lorenz"),
                          time_scale=LORENZ_TIME_SCALE if system == "lorenz" else None,
                          state_hidden=state_hidden,
                          dyn_hidden=dyn_hidden, fast=fast)


# -- losses --------------------------------------------------------------------

@dataclass(frozen=True)
class LossBreakdown:
    data: tuple[float, ...]
    equation: tuple[float, ...]
    alpha: tuple[int, ...]

    @property
    def L_d(self) -> float:
        return float(sum(a * d for a, d in zip(self.alpha, self.data)))

    @property
    def L_eq(self) -> float:
        return float(sum(self.equation))

    @property
    def L_total(self) -> float:
        return self.L_d + self.L_eq

    def as_dict(self) -> dict:
        return {"L_total": self.L_total, "L_d": self.L_d, "L_eq": self.L_eq}


def data_loss(pred, target, alpha):
    """Per-state mean squared errors and their alpha-weighted sum."""
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 2:
        raise ArgumentError(f"prediction {p.shape} and target {y.shape} must match")
    if p.shape[0] == 0:
        raise ArgumentError("empty batch")
    if len(alpha) != p.shape[1]:
        raise ArgumentError("alpha needs one entry per state")
    per_state = np.mean((p - y) ** 2, axis=0)
    return per_state, float(sum(a * d for a, d in zip(alpha, per_state)))


def equation_loss(state_net, dyn_net, feature_map, times):
    """Per-state mean squared residuals and their (unmasked) sum."""
    per_state, _, _ = ad.equation_terms(state_net, dyn_net, feature_map, times, with_grad=False)
    return per_state, float(per_state.sum())


def loss_and_grads(state_net, dyn_net, feature_map, data_times, targets, alpha, colloc_times):
    """Total loss breakdown with the gradients for both networks."""
    tape = ad.record(state_net, data_times)
    diff = tape.output - targets
    n = diff.shape[0]
    data_per_state = np.mean(diff * diff, axis=0)
    g_data = (2.0 / n) * diff * np.asarray(alpha, dtype=np.float64)
    state_grad = ad.backward(state_net, tape, g_data)
    eq_per_state, eq_state_grad, dyn_grad = ad.equation_terms(
        state_net, dyn_net, feature_map, colloc_times)
    breakdown = LossBreakdown(tuple(float(v) for v in data_per_state),
                              tuple(float(v) for v in eq_per_state), tuple(alpha))
    return breakdown, state_grad + eq_state_grad, dyn_grad


# -- Adam ------------------------------------------------------------------------

@dataclass
class AdamMoments:
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params) -> "AdamMoments":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, moments: AdamMoments, lr: float, step: int,
              beta1=ADAM_DEFAULTS["beta1"], beta2=ADAM_DEFAULTS["beta2"],
              eps=ADAM_DEFAULTS["eps"]):
    """One bias-corrected Adam update; returns ``(new_params, new_moments)``."""
    if step < 1:
        raise ArgumentError("Adam step index starts at 1")
    if len(params) != len(grads) or len(params) != len(moments.m):
        raise ArgumentError("params, grads and moments must align")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient at step {step}", step)
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, moments.m, moments.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ArgumentError("parameter and gradient shapes differ")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_p.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamMoments(new_m, new_v)


# -- training loop ---------------------------------------------------------------

@dataclass
class LossHistory:
    """Logged breakdowns (every ``log_every`` steps plus the final state)
    and the total loss of every single step."""

    steps: list[int] = field(default_factory=list)
    records: list[LossBreakdown] = field(default_factory=list)
    step_totals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def append(self, step: int, rec: LossBreakdown) -> None:
        self.steps.append(step)
        self.records.append(rec)

    def rows(self):
        for s, r in zip(self.steps, self.records):
            yield s, r.L_total, r.L_d, r.L_eq

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("step,L_total,L_d,L_eq\n")
            for s, lt, ld, le in self.rows():
                fh.write(f"{s},{lt!r},{ld!r},{le!r}\n")


class TrainingResult(NamedTuple):
    state_net: ad.MlpNetwork
    dyn_net: ad.MlpNetwork
    history: LossHistory
    report: ExperimentReport
    scaling: ScalingSpec
    reference: Trajectory


@functools.lru_cache(maxsize=None)
def _tune_allocator() -> bool:
    """Keep large activation buffers on the heap instead of fresh mmaps.

    Every step allocates many ~1 MB arrays; with glibc's default threshold each
    one is a new mapping that page-faults on first touch, which costs about a
    third of the step time. No-op off glibc.
    """
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        m_trim, m_top_pad, m_mmap = -1, -2, -3
        ok = libc.mallopt(m_mmap, 64 << 20) == 1
        ok &= libc.mallopt(m_trim, 256 << 20) == 1
        ok &= libc.mallopt(m_top_pad, 64 << 20) == 1
        return bool(ok)
    except (OSError, AttributeError):
        return False


def build_networks(config: TrainingConfig, dim: int, feature_dim: int, rng: RngStream):
    init = rng.substream("init")
    state_net = ad.init_params((1, *config.state_hidden, dim), config.activation,
                               seed=init.integers(2**63))
    dyn_net = ad.init_params((feature_dim, *config.dyn_hidden, dim), config.activation,
                             seed=init.integers(2**63))
    return state_net, dyn_net


def train(config: TrainingConfig, reference: Trajectory | None = None,
          progress=None) -> TrainingResult:
    """Run every phase of ``config`` and report errors on the reference grid.

    ``reference`` overrides the integrated preset trajectory (used to feed
    perturbed data). ``progress(step, breakdown)`` is called at logging steps.
    Training never stops early: not reaching ``loss_target`` only clears the
    report's ``converged`` flag.
    """
    config.validate()
    _tune_allocator()
    system = get_system(config.system)
    if reference is None:
        reference = integrate_reference(system)
    k = system.dim
    fmap = CandidateMap(system.candidate_map, k)
    spec = (fit_scaling(reference, config.time_scale, config.alpha) if config.scaling
            else ScalingSpec.identity(k))
    train_data = spec.apply(reference)
    data_t = train_data.times[:, None]
    targets = train_data.states
    t_span = float(train_data.times[-1])
    alpha = config.alpha

    rng = RngStream(config.seed)
    colloc_rng = rng.substream("collocation")
    state_net, dyn_net = build_networks(config, k, fmap.out_dim, rng)
    n_state = len(state_net.params())
    params = state_net.params() + dyn_net.params()
    moments = AdamMoments.zeros_like(params)

    history = LossHistory(step_totals=np.empty(config.total_steps))
    checkpoint = (state_net, dyn_net)
    colloc = None
    step = 0
    started = time.perf_counter()
    for epochs, lr in config.phases:
        for _ in range(epochs):
            if colloc is None or config.resample_every_step:
                colloc = resample_collocation(config, colloc_rng, t_span)[:, None]
            rec, g_state, g_dyn = loss_and_grads(state_net, dyn_net, fmap, data_t,
                                                 targets, alpha, colloc)
            total = rec.L_total
            if not np.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}", step, checkpoint, spec)
            history.step_totals[step] = total
            if step % config.log_every == 0:
                history.append(step, rec)
                checkpoint = (state_net, dyn_net)
                if progress is not None:
                    progress(step, rec)
            step += 1
            try:
                params, moments = adam_step(params, g_state.params() + g_dyn.params(),
                                            moments, lr, step)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(str(exc), step, checkpoint, spec) from None
            state_net = state_net.with_params(params[:n_state])
            dyn_net = dyn_net.with_params(params[n_state:])

    # final losses at the trained parameters on a fresh collocation draw
    colloc = resample_collocation(config, colloc_rng, t_span)[:, None]
    rec, _, _ = loss_and_grads(state_net, dyn_net, fmap, data_t, targets, alpha, colloc)
    if not np.isfinite(rec.L_total):
        raise TrainingDivergedError(f"non-finite loss at step {step}", step, checkpoint, spec)
    history.append(step, rec)
    if progress is not None:
        progress(step, rec)
    wall = time.perf_counter() - started

    report = build_report(state_net, dyn_net, fmap, spec, reference, config.to_dict(),
                          wall_seconds=wall, final_losses=rec.as_dict(),
                          loss_target=config.loss_target)
    return TrainingResult(state_net, dyn_net, history, report, spec, reference)
