"""Run directories: everything one training run leaves on disk.

Layout of ``<root>/<system>_<alphamask>_<seed>/``::

    config.json          flat training configuration
    reference.csv        reference trajectory used for data and errors
    report.json          ExperimentReport
    errors.csv           quantity,rel_l2
    losses.csv           step,L_total,L_d,L_eq
    step_losses.npy      L_total of every optimisation step
    predictions.csv      t, predicted states/dynamics, reference states/dynamics
    checkpoints/state_net.json, checkpoints/dyn_net.json
    manifest.json        file list with sha256 digests
"""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .dynamics import Trajectory, get_system
from .errors import ArgumentError, HiddenPhysicsError, TrainingDivergedError
from .features import CandidateMap
from .metrics import ExperimentReport, alpha_label, combined_table, error_labels, predict
from .scaling import ScalingSpec
from .training import TrainingConfig, TrainingResult, train

OUT_ENV = "HIDDEN_PHYSICS_OUT"
MANIFEST = "manifest.json"


class IncompleteRunError(HiddenPhysicsError, OSError):
    """A run directory is missing files a command needs."""


def default_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def run_dir_name(config: TrainingConfig) -> str:
    return f"{config.system}_{alpha_label(config.alpha)}_{config.seed}"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(run_dir: Path) -> dict:
    files = sorted(p for p in run_dir.rglob("*") if p.is_file() and p.name != MANIFEST)
    doc = {
        "tool": "hidden-physics",
        "tool_version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "files": [{"path": p.relative_to(run_dir).as_posix(), "sha256": _sha256(p),
                   "bytes": p.stat().st_size} for p in files],
    }
    (run_dir / MANIFEST).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return doc


def verify_manifest(run_dir) -> list[str]:
    """Return the listed files that are missing or whose digest changed."""
    run_dir = Path(run_dir)
    doc = json.loads((run_dir / MANIFEST).read_text(encoding="utf-8"))
    bad = []
    for entry in doc["files"]:
        p = run_dir / entry["path"]
        if not p.is_file() or _sha256(p) != entry["sha256"]:
            bad.append(entry["path"])
    return bad


def write_predictions(path: Path, result_states, result_derivs, reference: Trajectory) -> None:
    names = reference.state_names
    header = (["t"] + [f"{n}_pred" for n in names] + [f"d{n}_pred" for n in names]
              + [f"{n}_ref" for n in names] + [f"d{n}_ref" for n in names])
    table = np.column_stack((reference.times, result_states, result_derivs,
                             reference.states, reference.derivs))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in table:
            w.writerow([format(v, ".17g") for v in row])


def _save_nets(run_dir: Path, state_net, dyn_net, seed, scaling: ScalingSpec) -> dict:
    ckpt = run_dir / "checkpoints"
    ckpt.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, net in (("state_net", state_net), ("dyn_net", dyn_net)):
        ad.save_checkpoint(ckpt / f"{name}.json", net, seed=seed, scaling=scaling.to_dict())
        paths[name] = f"checkpoints/{name}.json"
    return paths


def write_config(path: Path, config: TrainingConfig) -> None:
    path.write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_config(path) -> TrainingConfig:
    with open(path, encoding="utf-8") as fh:
        return TrainingConfig.from_dict(json.load(fh))


def execute(config: TrainingConfig, root=None, progress=None) -> Path:
    """Train ``config`` and write its run directory; return the directory.

    On divergence the last finite checkpoint is saved before re-raising.
    """
    config.validate()
    run_dir = Path(root if root is not None else default_root()) / run_dir_name(config)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_config(run_dir / "config.json", config)
    try:
        result = train(config, progress=progress)
    except TrainingDivergedError as exc:
        if exc.checkpoint is not None:
            scaling = exc.scaling or ScalingSpec.identity(get_system(config.system).dim)
            _save_nets(run_dir, *exc.checkpoint, config.seed, scaling)
        write_manifest(run_dir)
        raise
    write_result(run_dir, config, result)
    return run_dir


def write_result(run_dir: Path, config: TrainingConfig, result: TrainingResult) -> None:
    result.reference.to_csv(run_dir / "reference.csv")
    report = result.report
    report.checkpoints = _save_nets(run_dir, result.state_net, result.dyn_net,
                                    config.seed, result.scaling)
    fmap = CandidateMap(get_system(config.system).candidate_map, result.reference.dim)
    states, derivs = predict(result.state_net, result.dyn_net, fmap, result.scaling,
                             result.reference.times)
    write_predictions(run_dir / "predictions.csv", states, derivs, result.reference)
    report.save(run_dir / "report.json")
    report.write_errors_csv(run_dir / "errors.csv")
    result.history.to_csv(run_dir / "losses.csv")
    np.save(run_dir / "step_losses.npy", result.history.step_totals)
    write_manifest(run_dir)


@dataclass
class LoadedRun:
    run_dir: Path
    config: TrainingConfig
    report: ExperimentReport
    state_net: ad.MlpNetwork
    dyn_net: ad.MlpNetwork
    scaling: ScalingSpec
    reference: Trajectory

    def predict(self, times=None):
        t = self.reference.times if times is None else times
        fmap = CandidateMap(get_system(self.config.system).candidate_map, self.reference.dim)
        return predict(self.state_net, self.dyn_net, fmap, self.scaling, t)


def load_run(run_dir) -> LoadedRun:
    run_dir = Path(run_dir)
    needed = ["config.json", "report.json", "reference.csv",
              "checkpoints/state_net.json", "checkpoints/dyn_net.json"]
    missing = [n for n in needed if not (run_dir / n).is_file()]
    if missing:
        raise IncompleteRunError(f"{run_dir} is incomplete, missing: {', '.join(missing)}")
    state_net, _, scaling = ad.load_checkpoint(run_dir / "checkpoints/state_net.json")
    dyn_net, _, _ = ad.load_checkpoint(run_dir / "checkpoints/dyn_net.json")
    return LoadedRun(run_dir, load_config(run_dir / "config.json"),
                     ExperimentReport.load(run_dir / "report.json"), state_net, dyn_net,
                     ScalingSpec.from_dict(scaling), Trajectory.from_csv(run_dir / "reference.csv"))


def table(run_dirs) -> tuple[list[str], list[list[str]]]:
    reports = []
    for d in run_dirs:
        path = Path(d) / "report.json"
        if not path.is_file():
            raise IncompleteRunError(f"{d} has no report.json")
        reports.append(ExperimentReport.load(path))
    return combined_table(reports)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def plot_data(run_dir, out_dir=None) -> list[Path]:
    """Reference-vs-predicted curves per quantity plus a phase-space table."""
    run_dir = Path(run_dir)
    pred_path = run_dir / "predictions.csv"
    if not pred_path.is_file():
        raise IncompleteRunError(f"{run_dir} has no predictions.csv")
    names = get_system(check_same_system([run_dir])).state_names
    with open(pred_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array(rows[1:], dtype=np.float64)
    col = {name: i for i, name in enumerate(header)}
    out = Path(out_dir) if out_dir is not None else run_dir / "plot"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    t = data[:, 0]
    for label in error_labels(names):
        path = out / f"{label}.csv"
        write_csv(path, ["t", "reference", "predicted"],
                  [[format(a, ".17g") for a in r] for r in
                   zip(t, data[:, col[f"{label}_ref"]], data[:, col[f"{label}_pred"]])])
        written.append(path)
    phase_cols = [f"{n}_ref" for n in names] + [f"{n}_pred" for n in names]
    path = out / "phase.csv"
    write_csv(path, phase_cols,
              [[format(v, ".17g") for v in r] for r in data[:, [col[c] for c in phase_cols]]])
    written.append(path)
    return written


def check_same_system(run_dirs) -> str:
    systems = set()
    for d in run_dirs:
        cfg = Path(d) / "config.json"
        if not cfg.is_file():
            raise IncompleteRunError(f"{d} has no config.json")
        systems.add(json.loads(cfg.read_text(encoding="utf-8"))["system"])
    if len(systems) != 1:
        raise ArgumentError(f"run directories mix systems: {', '.join(sorted(systems))}")
    return systems.pop()
