"""Command-line entry point: ``distmatch run <config> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 invariant violation, 5 I/O failure.  Set ``DISTMATCH_LOG`` to a logging
level name (``INFO``, ``DEBUG``) for progress output on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, parse_config, preset, with_overrides, build_scenario
from .control import LtiModel
from .engine import run_simulation
from .errors import (
    ConfigError,
    GramianIllConditioned,
    InvariantViolation,
    NoConvergence,
    NotControllable,
    SolverFailure,
)
from .plotting import emit_metrics_figure, emit_snapshot

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INVARIANT, EXIT_IO = 0, 2, 3, 4, 5
NUMERICAL = (SolverFailure, GramianIllConditioned, NotControllable, NoConvergence,
             FloatingPointError, np.linalg.LinAlgError)
METRIC_COLUMNS = ["cycle", "psi_start", "psi_end", "w2", "descent_ok", "bound_ok"]

log = logging.getLogger("distmatch")


def _f(x):
    return repr(float(x))


def _b(x):
    return "true" if x else "false"


def write_metrics(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([r.cycle, _f(r.psi_start), _f(r.psi_end), _f(r.w2), _b(r.descent_ok), _b(r.bound_ok)])


def write_diagnostics(rows, initial_w2, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cycle", "w2_start", "max_err_start", "max_err_end", "errors_nonincreasing", "shortfalls"])
        w.writerow([-1, _f(initial_w2), "", "", "", ""])
        for r in rows:
            w.writerow([r.cycle, _f(r.w2_start), _f(r.max_err_start), _f(r.max_err_end),
                        _b(r.errors_nonincreasing), r.shortfalls])


def write_trajectories(traj, path, names):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "agent", *names])
        for k in range(traj.shape[0]):
            for i in range(traj.shape[1]):
                w.writerow([k, i, *(_f(v) for v in traj[k, i])])


def write_step_trace(rows, horizon, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "w2"])
        for r in rows:
            for t, v in enumerate(r.w2_trace):
                w.writerow([r.cycle * horizon + t, _f(v)])


def _absolute_paths(cfg):
    base = Path(cfg.base_dir)
    if cfg.initial_path:
        cfg.initial_path = str((base / cfg.initial_path).resolve())
    if cfg.target_path:
        cfg.target_path = str((base / cfg.target_path).resolve())
    return cfg


def run(config_path=None, preset_name=None, seed=None, out_dir=None, cycles=None):
    """Run one scenario and write every artifact; returns the result."""
    if (config_path is None) == (preset_name is None):
        raise ConfigError("run", "give exactly one of a config file or --preset")
    cfg = preset(preset_name) if preset_name else parse_config(config_path)
    cfg = _absolute_paths(with_overrides(cfg, seed=seed, cycles=cycles, out_dir=out_dir))
    scenario = build_scenario(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())

    dumps = out / "dumps"
    if cfg.dumps:
        dumps.mkdir(exist_ok=True)

    def progress(row, state):
        log.info("cycle %d: psi %.6g -> %.6g, W2 %.6g, descent %s, bound %s",
                 row.cycle, row.psi_start, row.psi_end, row.w2, row.descent_ok, row.bound_ok)
        if cfg.dumps:
            (dumps / f"plan_{row.cycle:04d}.txt").write_text(state.plan.to_text())
            if state.store is not None:
                (dumps / f"memory_{row.cycle:04d}.txt").write_text(state.store.to_text())

    result = run_simulation(scenario, progress=progress)

    write_metrics(result.rows, out / "metrics.csv")
    write_diagnostics(result.rows, result.initial_w2, out / "diagnostics.csv")
    names = ["x", "y", "theta"] if cfg.dynamics == "unicycle" else ["x1", "x2"]
    write_trajectories(result.trajectory, out / "trajectories.csv", names)
    if cfg.w2_every_step:
        write_step_trace(result.rows, cfg.H, out / "w2_steps.csv")
    if cfg.snapshots:
        emit_snapshot(result.trajectory[:1], scenario.targets, out / "initial.svg", cfg.bounds)
        emit_snapshot(result.trajectory, scenario.targets, out / "snapshot.svg", cfg.bounds)
        emit_metrics_figure(result.rows, out / "metrics.svg")

    manifest = {
        "version": __version__,
        "seed": cfg.seed,
        "preset": preset_name,
        "config": cfg.as_dict(),
    }
    if isinstance(scenario.model, LtiModel):
        manifest["model"] = {"A": scenario.model.A.tolist(), "B": scenario.model.B.tolist()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return result


def build_parser():
    p = argparse.ArgumentParser(prog="distmatch", description="Multi-agent distribution matching runs.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario and write its output files")
    r.add_argument("config", nargs="?", help="scenario file (INI)")
    r.add_argument("--preset", choices=sorted(PRESETS), help="built-in scenario instead of a file")
    r.add_argument("--seed", type=int, help="override scenario.seed")
    r.add_argument("--out", help="override output.dir")
    r.add_argument("--cycles", type=int, help="override scenario.L")
    sub.add_parser("presets", help="list built-in scenarios")
    return p


def main(argv=None):
    level = os.environ.get("DISTMATCH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        for name in sorted(PRESETS):
            print(name)
        return EXIT_OK
    try:
        result = run(args.config, args.preset, args.seed, args.out, args.cycles)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {_where(exc)}{exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except NUMERICAL as exc:
        print(f"numerical failure: {_where(exc)}{exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    rows = result.rows
    final = rows[-1].w2 if rows else result.initial_w2
    print(f"{len(rows)} cycles, final W2 {final:.6g}, "
          f"descent {sum(r.descent_ok for r in rows)}/{len(rows)}, bound {sum(r.bound_ok for r in rows)}/{len(rows)}")
    return EXIT_OK


def _where(exc):
    cycle = getattr(exc, "cycle", None)
    return "" if cycle is None or str(exc).startswith("cycle") else f"cycle {cycle}: "


if __name__ == "__main__":
    sys.exit(main())
