"""Relative L2 errors and the experiment report."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, UndefinedMetricError

REPORT_FORMAT_VERSION = 1


def rel_l2_error(pred, ref) -> float:
    """Root-mean-square deviation divided by the RMS of the reference."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    r = np.asarray(ref, dtype=np.float64).ravel()
    if p.shape != r.shape or r.size == 0:
        raise ArgumentError(f"need equal non-empty lengths, got {p.size} and {r.size}")
    m = np.max(np.abs(r))
    if m == 0:
        raise UndefinedMetricError("reference is identically zero")
    with np.errstate(over="ignore"):
        return float(_rms(r - p) / _rms(r))


def _rms(v):
    # divide by the largest magnitude first so squares neither underflow nor overflow
    m = np.max(np.abs(v))
    if m == 0 or not np.isfinite(m):
        return m
    v = v / m
    return m * np.sqrt(np.mean(v * v))


def error_labels(state_names) -> list[str]:
    """Column order used throughout: each state followed by its derivative."""
    out = []
    for n in state_names:
        out.extend((n, f"d{n}"))
    return out


@dataclass
class ExperimentReport:
    """Outcome of one training run, serialised as ``report.json``.

    ``errors`` maps quantity labels (``x1``, ``dx1``, ...) to relative L2
    errors on the reference grid.
    """

    system: str
    alpha: list[int]
    seed: int
    config: dict
    errors: dict[str, float]
    final_losses: dict[str, float]
    wall_seconds: float
    converged: bool
    loss_target: float
    fast: bool = False
    checkpoints: dict[str, str] = field(default_factory=dict)
    notes: dict[str, str] = field(default_factory=dict)
    format_version: int = REPORT_FORMAT_VERSION

    def __post_init__(self):
        if any(v < 0 for v in self.errors.values()):
            raise ArgumentError("errors must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentReport":
        if doc.get("format_version") != REPORT_FORMAT_VERSION:
            raise ArgumentError(f"unsupported report format_version {doc.get('format_version')!r}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "ExperimentReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def write_errors_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["quantity", "rel_l2"])
            for k, v in self.errors.items():
                w.writerow([k, repr(v)])


def alpha_label(alpha) -> str:
    return "".join(str(int(a)) for a in alpha)


def combined_table(reports) -> tuple[list[str], list[list[str]]]:
    """One row per alpha mask, one column per quantity, for runs of one system."""
    reports = list(reports)
    if not reports:
        raise ArgumentError("need at least one report")
    systems = {r.system for r in reports}
    if len(systems) != 1:
        raise ArgumentError(f"reports mix systems: {', '.join(sorted(systems))}")
    labels = list(reports[0].errors)
    header = ["alpha", *labels]
    rows = [[alpha_label(r.alpha), *(repr(r.errors[k]) for k in labels)] for r in reports]
    return header, rows


def predict(state_net, dyn_net, feature_map, scaling, times):
    """Predicted states and dynamics in physical units at ``times``.

    The dynamics network is evaluated along the *predicted* states, so no
    reference state enters the prediction.
    """
    t = scaling.scale_times(np.asarray(times, dtype=np.float64))[:, None]
    states_scaled = ad.forward(state_net, t)
    derivs_scaled = ad.forward(dyn_net, feature_map(states_scaled))
    return scaling.unscale_states(states_scaled), scaling.unscale_derivs(derivs_scaled)


def build_report(state_net, dyn_net, feature_map, scaling, reference, config: dict,
                 wall_seconds: float, final_losses: dict, loss_target: float) -> ExperimentReport:
    states, derivs = predict(state_net, dyn_net, feature_map, scaling, reference.times)
    errors = {}
    for i, name in enumerate(reference.state_names):
        errors[name] = rel_l2_error(states[:, i], reference.states[:, i])
        errors[f"d{name}"] = rel_l2_error(derivs[:, i], reference.derivs[:, i])
    return ExperimentReport(
        system=config["system"],
        alpha=list(config["alpha"]),
        seed=config["seed"],
        config=config,
        errors=errors,
        final_losses=final_losses,
        wall_seconds=wall_seconds,
        converged=bool(final_losses["L_total"] <= loss_target),
        loss_target=loss_target,
        fast=bool(config.get("fast", False)),
        notes={
            "activation": f"{state_net.activation} hidden layers, linear output",
            "init": "glorot-uniform weights, zero biases",
            "batching": "full batch, one Adam step per epoch",
            "dynamics_errors": "dynamics net evaluated along predicted states",
            "scaling": ("off" if scaling.is_identity
                        else f"min-max states onto [-1,1], time in units of {scaling.time_scale:g}"),
        },
    )
