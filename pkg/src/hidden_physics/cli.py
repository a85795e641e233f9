"""Command line entry point: ``hidden-physics {generate,train,table,plotdata}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import runs
from .dynamics import PRESETS, get_system, integrate_reference
from .errors import (ArgumentError, ConfigError, HiddenPhysicsError, IntegrationError,
                     DivergenceError, TrainingDivergedError)
from .training import TrainingConfig, fast_phases, preset_config

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_DIVERGED = 4
EXIT_IO = 5

log = logging.getLogger("hidden_physics")


def _parse_alpha(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError("alpha", f"expected comma-separated 0/1 values, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hidden-physics",
                                description="Recover state and dynamics of autonomous ODEs "
                                            "from (partial) trajectory data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a reference trajectory CSV")
    g.add_argument("system")
    g.add_argument("--out", help="output CSV path (default: <system>.csv)")

    t = sub.add_parser("train", help="train one or more runs")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(PRESETS))
    src.add_argument("--config", help="flat JSON configuration file")
    t.add_argument("--alpha", action="append",
                   help="data mask such as 1,0; repeat for several runs")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help=f"output root (default: ${runs.OUT_ENV} or ./runs)")
    t.add_argument("--fast", action="store_true", help="10x fewer epochs, for smoke tests")
    t.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    tb = sub.add_parser("table", help="combine run reports into one error table")
    tb.add_argument("run_dirs", nargs="+")
    tb.add_argument("--out", help="CSV path (default: stdout)")

    pd = sub.add_parser("plotdata", help="write reference-vs-predicted CSVs")
    pd.add_argument("run_dir")
    pd.add_argument("--out", help="output directory (default: <run_dir>/plot)")
    return p


def _configs(args) -> list[TrainingConfig]:
    alphas = [_parse_alpha(a) for a in args.alpha] if args.alpha else [None]
    out = []
    for alpha in alphas:
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
            if alpha is not None:
                doc["alpha"] = list(alpha)
            cfg = TrainingConfig.from_dict(doc)
            if args.fast and not cfg.fast:
                cfg = replace(cfg, phases=fast_phases(cfg.phases), fast=True)
        else:
            cfg = preset_config(args.preset, alpha, fast=args.fast)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        out.append(cfg.validate())
    return out


def _progress(step, rec):
    if step % 1000 == 0:
        log.info("step %d  L_total=%.3e  L_d=%.3e  L_eq=%.3e", step, rec.L_total, rec.L_d, rec.L_eq)


def _train_one(cfg: TrainingConfig, root) -> str:
    return str(runs.execute(cfg, root, progress=_progress))


def cmd_generate(args) -> int:
    system = get_system(args.system)
    out = Path(args.out or f"{system.name}.csv")
    integrate_reference(system).to_csv(out)
    print(out)
    return EXIT_OK


def cmd_train(args) -> int:
    configs = _configs(args)
    root = Path(args.out) if args.out else runs.default_root()
    if args.jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            dirs = list(pool.map(_train_one, configs, [root] * len(configs)))
    else:
        dirs = [_train_one(c, root) for c in configs]
    for d in dirs:
        print(d)
    return EXIT_OK


def cmd_table(args) -> int:
    runs.check_same_system(args.run_dirs)
    header, rows = runs.table(args.run_dirs)
    if args.out:
        runs.write_csv(args.out, header, rows)
        print(args.out)
    else:
        print(",".join(header))
        for r in rows:
            print(",".join(r))
    return EXIT_OK


def cmd_plotdata(args) -> int:
    for path in runs.plot_data(args.run_dir, args.out):
        print(path)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "table": cmd_table,
            "plotdata": cmd_plotdata}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingDivergedError, IntegrationError, DivergenceError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, HiddenPhysicsError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
