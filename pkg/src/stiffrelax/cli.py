"""Command-line entry point.

Exit codes: 0 on success, 2 on configuration errors, 3 on numerical failures
(the error class name is printed on stderr).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, StiffRelaxError
from .experiments import (Table, build_model, control_signals, emit_plots, load_config,
                          read_table, run_cell_validation, run_occupational,
                          run_trajectory_sweep, run_value_sweep)
from .integrate import integrate_reduced, integrate_stiff, integrate_three_scale
from .models import REGISTRY, get_model
from .reduction import build_reduced, cascade_reduce

log = logging.getLogger("stiffrelax")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--seed", type=int, default=None, help="seed for sampled inputs")
    p.add_argument("--budget-nodes", type=int, default=None,
                   help="largest full-state grid the value solver may allocate")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="stiffrelax", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    models = sub.add_parser("models", parents=[common], help="inspect the model zoo")
    models.add_argument("action", choices=["list"])

    for name, text in [("simulate", "stiff trajectory at each epsilon"),
                       ("reduce", "reduced trajectory"),
                       ("sweep-trajectory", "relaxation error against epsilon"),
                       ("sweep-value", "value-function gap against epsilon"),
                       ("cell", "discounted cell problem against the closed form"),
                       ("occmeasure", "occupational measure of the frozen fast flow")]:
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("config", help="JSON experiment configuration")

    plot = sub.add_parser("plot", parents=[common], help="plot result tables")
    plot.add_argument("tables", nargs="+", help="CSV tables written by the sweeps")
    return ap


def _load(args, expected=None):
    cfg = load_config(args.config)
    if expected and cfg.experiment != expected:
        raise ConfigError(f"{args.command} needs experiment {expected!r}, got {cfg.experiment!r}")
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.budget_nodes is not None:
        changes["budget_nodes"] = args.budget_nodes
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
    out = Path(args.out if args.out is not None else cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _write(out: Path, *tables: Table):
    for t in tables:
        path = t.write(out)
        print(path)


def cmd_models(args):
    for name in REGISTRY:
        mdl = get_model(name)
        s = mdl.system
        dims = f"m={s.m} n={s.n}" + (f" l={s.l}" if mdl.three_scale else "")
        print(f"{name}\t{dims}\t{', '.join(mdl.layout)}")


def cmd_simulate(args):
    cfg, out = _load(args)
    steps = cfg.steps or int(round(cfg.horizon / 1e-3))
    for eps in cfg.epsilons:
        mdl = build_model(cfg, eps)
        s = mdl.system
        sigs = control_signals(cfg, mdl)
        eq = mdl.equilibrium(mdl.z0)
        if mdl.three_scale:
            traj = integrate_three_scale(s, *sigs, mdl.z0, eq[:s.n], eq[s.n:], steps,
                                         names=mdl.layout)
        else:
            traj = integrate_stiff(s, *sigs, mdl.z0, eq, steps, names=mdl.layout)
        path = out / f"{cfg.name}_stiff_eps{eps:g}.csv"
        traj.to_csv(path)
        print(path)


def cmd_reduce(args):
    cfg, out = _load(args)
    steps = cfg.steps or int(round(cfg.horizon / 1e-3))
    mdl = build_model(cfg)
    s = mdl.system
    red = cascade_reduce(s)[1] if mdl.three_scale else build_reduced(s)
    traj = integrate_reduced(red, *control_signals(cfg, mdl), z0=mdl.z0, steps=steps,
                             names=mdl.slow_layout)
    path = out / f"{cfg.name}_reduced.csv"
    traj.to_csv(path)
    print(path)


def cmd_sweep_trajectory(args):
    cfg, out = _load(args, "trajectory")
    _write(out, *run_trajectory_sweep(cfg, jobs=args.jobs))


def cmd_sweep_value(args):
    cfg, out = _load(args, "value")
    _write(out, *run_value_sweep(cfg, jobs=args.jobs, budget_nodes=args.budget_nodes))


def cmd_cell(args):
    cfg, out = _load(args, "cell")
    _write(out, *run_cell_validation(cfg, jobs=args.jobs))


def cmd_occmeasure(args):
    cfg, out = _load(args, "occupational")
    hist, summary, _ = run_occupational(cfg)
    _write(out, hist, summary)


def cmd_plot(args):
    out = Path(args.out or ".")
    tables = []
    for t in args.tables:
        if not Path(t).is_file():
            raise ConfigError(f"no such table {t}")
        tables.append(read_table(t))
    for path in emit_plots(tables, out):
        print(path)


COMMANDS = {
    "models": cmd_models,
    "simulate": cmd_simulate,
    "reduce": cmd_reduce,
    "sweep-trajectory": cmd_sweep_trajectory,
    "sweep-value": cmd_sweep_value,
    "cell": cmd_cell,
    "occmeasure": cmd_occmeasure,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("ConfigError: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StiffRelaxError, np.linalg.LinAlgError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
