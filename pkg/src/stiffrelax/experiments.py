"""Experiment configurations, sweeps, occupational measures and plots.

Configurations are strict JSON documents; unknown keys are rejected. Every
sweep returns a :class:`Table` whose CSV form is a deterministic function of
the configuration, so repeated runs give byte-identical files. Wall-clock
timings are kept apart in a sibling ``*_timing.csv`` file.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import json
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .errors import BoundsExceeded, ConfigError, GridMismatch, GridTooLarge
from .hjb import (DEFAULT_NODE_BUDGET, Grid, full_drifts, reduced_drifts, solve_cell,
                  solve_hjb_effective, solve_hjb_full, stable_steps)
from .integrate import (ControlSignal, integrate_reduced, integrate_stiff,
                        integrate_three_scale, trajectory_error)
from .models import REGISTRY, ModelInstance, get_model, local_equilibrium_residual
from .reduction import (build_reduced, cascade_reduce, lambda1_closed_form, solve_micro_static,
                        solve_static)
from .system import ControlBox, CostSpec, ThreeScaleSystem, TwoScaleSystem

log = logging.getLogger(__name__)

EXPERIMENTS = ("trajectory", "value", "cell", "occupational")


# --------------------------------------------------------------------------- config

def _from_dict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            sub = _NESTED.get((cls.__name__, f.name))
            val = data[f.name]
            kwargs[f.name] = _from_dict(sub, val, f"{where}.{f.name}") if sub and val is not None else val
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(f"{where}: missing key {f.name!r}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class ModelSpec:
    name: str
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class GridSpec:
    lower: List[float]
    upper: List[float]
    nodes: List[int]

    def build(self) -> Grid:
        return Grid(self.lower, self.upper, tuple(self.nodes))


@dataclass(frozen=True)
class CostConfig:
    running: str = "zero"
    terminal: str = "quadratic"
    weight: float = 1.0
    center: Optional[List[float]] = None


@dataclass(frozen=True)
class CellConfig:
    z: Optional[List[float]] = None
    p: Optional[List[float]] = None
    deltas: List[float] = field(default_factory=lambda: [1e-3])
    grid: Optional[GridSpec] = None
    mode: str = "exact"
    reference: Optional[List[float]] = None


@dataclass(frozen=True)
class OccupationalConfig:
    z: Optional[List[float]] = None
    beta: Optional[List[float]] = None
    offset: Optional[List[float]] = None
    decay_times: float = 100.0
    bins: int = 50
    half_width: float = 5.0
    radius_bins: int = 1
    samples: int = 200_000


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    experiment: str
    model: ModelSpec
    epsilons: List[float] = field(default_factory=lambda: [1e-1, 1e-2, 1e-3])
    horizon: float = 1.0
    steps: Optional[int] = None
    controls: Dict[str, List[List[float]]] = field(default_factory=dict)
    slow_grid: Optional[GridSpec] = None
    fast_grid: Optional[GridSpec] = None
    cost: CostConfig = field(default_factory=CostConfig)
    cell: CellConfig = field(default_factory=CellConfig)
    occupational: OccupationalConfig = field(default_factory=OccupationalConfig)
    courant: float = 1.0
    budget_nodes: int = DEFAULT_NODE_BUDGET
    seed: int = 0
    output: str = "out"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
        if self.model.name not in REGISTRY:
            raise ConfigError(f"unknown model {self.model.name!r}")
        eps = list(self.epsilons)
        if self.experiment in ("trajectory", "value"):
            if not eps:
                raise ConfigError("epsilon list is empty")
            if any(not (e > 0) for e in eps):
                raise ConfigError("epsilons must be positive")
            if any(b >= a for a, b in zip(eps, eps[1:])):
                raise ConfigError("epsilons must be strictly decreasing")
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        unknown = set(self.controls) - {"alpha", "beta", "gamma"}
        if unknown:
            raise ConfigError(f"unknown control names {sorted(unknown)}")
        if self.experiment == "cell" and not self.cell.deltas:
            raise ConfigError("delta list is empty")


_NESTED = {
    ("ExperimentConfig", "model"): ModelSpec,
    ("ExperimentConfig", "slow_grid"): GridSpec,
    ("ExperimentConfig", "fast_grid"): GridSpec,
    ("ExperimentConfig", "cost"): CostConfig,
    ("ExperimentConfig", "cell"): CellConfig,
    ("ExperimentConfig", "occupational"): OccupationalConfig,
    ("CellConfig", "grid"): GridSpec,
}


def parse_config(data: dict) -> ExperimentConfig:
    return _from_dict(ExperimentConfig, data, "config")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(data)


def build_model(cfg: ExperimentConfig, epsilon: Optional[float] = None) -> ModelInstance:
    params = dict(cfg.model.params)
    if epsilon is not None:
        params["epsilon"] = epsilon
    try:
        return get_model(cfg.model.name, **params)
    except TypeError as exc:
        raise ConfigError(f"bad model parameters: {exc}") from exc


def build_cost(cfg: ExperimentConfig) -> CostSpec:
    c = cfg.cost
    center = None if c.center is None else np.asarray(c.center, dtype=float)

    def shape(kind):
        def f(z):
            dz = z if center is None else z - center
            if kind == "zero":
                return 0.0
            if kind == "quadratic":
                return 0.5 * c.weight * float(dz @ dz)
            if kind == "abs":
                return c.weight * float(np.sum(np.abs(dz)))
            if kind == "one":
                return c.weight
            raise ConfigError(f"unknown cost kind {kind!r}")
        f(np.zeros(1) if center is None else center)
        return f

    return CostSpec(shape(c.running), shape(c.terminal), cfg.horizon)


def _signal(values, box: ControlBox, horizon: float) -> ControlSignal:
    if values is None:
        return ControlSignal.constant(box.center, horizon, box)
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[1] == 1 and box.dim > 1:
        v = np.repeat(v, box.dim, axis=1)
    return ControlSignal.uniform(v, horizon, box)


def control_signals(cfg: ExperimentConfig, model: ModelInstance):
    s = model.system
    boxes = [("alpha", s.omega_A), ("beta", s.omega_B)]
    if isinstance(s, ThreeScaleSystem):
        boxes.append(("gamma", s.omega_G))
    return [_signal(cfg.controls.get(k), b, cfg.horizon) for k, b in boxes]


# --------------------------------------------------------------------------- tables

@dataclass
class Table:
    """Named CSV table; ``None`` cells are written empty."""

    name: str
    columns: List[str]
    rows: List[List[Any]]

    def write(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"{self.name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([_fmt(x) for x in row])
        return path

    def column(self, name) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([np.nan if r[j] is None else float(r[j]) for r in self.rows])


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def read_table(path) -> Table:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return Table(path.stem, [], [])
    conv = lambda s: None if s == "" else float(s)
    body = []
    for r in rows[1:]:
        try:
            body.append([conv(x) for x in r])
        except ValueError:
            body.append(r)
    return Table(path.stem, rows[0], body)


def _run_jobs(fn, args: Sequence, jobs: int):
    """Map ``fn`` over ``args`` keeping input order, optionally in worker processes."""
    if jobs <= 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, args))


def _timed(fn, arg):
    t0 = time.perf_counter()
    out = fn(arg)
    return out, time.perf_counter() - t0


# --------------------------------------------------------------------------- trajectory sweep

def _steps(cfg):
    return cfg.steps if cfg.steps is not None else int(round(cfg.horizon / 1e-3))


def trajectory_point(cfg: ExperimentConfig, epsilon: float) -> Dict[str, Any]:
    """One stiff run and its reduced counterpart at ``epsilon``."""
    model = build_model(cfg, epsilon)
    sigs = control_signals(cfg, model)
    s, N = model.system, _steps(cfg)
    z0 = model.z0
    eq = model.equilibrium(z0)
    names = model.layout
    try:
        if model.three_scale:
            y0, x0 = eq[:s.n], eq[s.n:]
            stiff = integrate_three_scale(s, *sigs, z0, y0, x0, N, names=names)
            red = cascade_reduce(s)[1]
        else:
            stiff = integrate_stiff(s, *sigs, z0, eq, N, names=names)
            red = build_reduced(s)
        reduced = integrate_reduced(red, *sigs, z0=z0, steps=N, names=model.slow_layout)
    except Exception as exc:
        exc.args = (f"[epsilon={epsilon:g}] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise
    mus = {k: trajectory_error(stiff, reduced, k) for k in model.slow_layout}
    mus["slow"] = trajectory_error(stiff, reduced, "slow")
    T = cfg.horizon
    fast_ctrl = [sg(T) for sg in sigs[1:]]
    residual = local_equilibrium_residual(model, stiff.final, *fast_ctrl)
    return {"epsilon": epsilon, "mu": mus, "residual": residual, "stiff": stiff, "reduced": reduced}


def _trajectory_job(args):
    cfg, eps = args
    out, wall = _timed(lambda e: trajectory_point(cfg, e), eps)
    out.pop("stiff")
    out.pop("reduced")
    return out, wall


def run_trajectory_sweep(cfg: ExperimentConfig, jobs: int = 1):
    """Relaxation error ``mu(eps)`` of stiff against reduced trajectories.

    Returns the result table and a timing table.
    """
    results = _run_jobs(_trajectory_job, [(cfg, e) for e in cfg.epsilons], jobs)
    model = build_model(cfg)
    slices = list(model.slow_layout) + ["slow"]
    cols = ["epsilon"] + [f"mu_{k}" for k in slices] + ["residual_T", "ratio"]
    rows, prev = [], None
    for res, _ in results:
        mu = res["mu"]["slow"]
        ratio = None if prev is None or prev == 0 else mu / prev
        rows.append([res["epsilon"]] + [res["mu"][k] for k in slices] + [res["residual"], ratio])
        prev = mu
    timing = Table(f"{cfg.name}_timing", ["epsilon", "wall_seconds"],
                   [[r["epsilon"], w] for r, w in results])
    return Table(cfg.name, cols, rows), timing


# --------------------------------------------------------------------------- value sweep

def _equilibrium_points(sys, zpts: np.ndarray) -> np.ndarray:
    """Slow nodes lifted to the fast equilibrium at the centre controls."""
    rows = []
    for z in zpts:
        if isinstance(sys, ThreeScaleSystem):
            y = solve_static(sys.embedded_two_scale(), z, sys.omega_B.center)
            x = solve_micro_static(sys, z, sys.omega_G.center)
            rows.append(np.concatenate([z, y, x]))
        else:
            rows.append(np.concatenate([z, solve_static(sys, z, sys.omega_B.center)]))
    return np.array(rows)


def value_point(cfg: ExperimentConfig, epsilon: float, effective=None, budget_nodes=None):
    model = build_model(cfg, epsilon)
    s = model.system
    cost = build_cost(cfg)
    if cfg.slow_grid is None or cfg.fast_grid is None:
        raise ConfigError("value sweeps need slow_grid and fast_grid")
    zg, fg = cfg.slow_grid.build(), cfg.fast_grid.build()
    if zg.dim != s.m:
        raise GridMismatch(f"slow grid has dimension {zg.dim}, model has {s.m}")
    full_grid = Grid(np.concatenate([zg.lower, fg.lower]), np.concatenate([zg.upper, fg.upper]),
                     zg.nodes + fg.nodes)
    budget = budget_nodes or cfg.budget_nodes
    if full_grid.size > budget:
        raise GridTooLarge(f"grid has {full_grid.size} nodes, budget is {budget}",
                           nodes=full_grid.size)
    if effective is None:
        effective = effective_value(cfg)
    _, _, f = full_drifts(s, full_grid)
    N = cfg.steps or stable_steps(f, full_grid.spacing, cfg.horizon, cfg.courant)
    full = solve_hjb_full(s, cost, full_grid, N, courant=cfg.courant, budget_nodes=budget)
    zpts = zg.points()
    v0 = effective.final.ravel()
    on_eq = full.interpolate(_equilibrium_points(s, zpts))
    gap_eq = float(np.max(np.abs(on_eq - v0)))
    vfull = full.final.reshape(zg.size, -1)
    gap_all = float(np.max(np.abs(vfull - v0[:, None])))
    return {"epsilon": epsilon, "gap_equilibrium": gap_eq, "gap_full": gap_all, "steps": N,
            "h": cfg.horizon / N, "full": full}


def effective_value(cfg: ExperimentConfig):
    model = build_model(cfg)
    s = model.system
    zg = cfg.slow_grid.build()
    red = cascade_reduce(s)[1] if isinstance(s, ThreeScaleSystem) else build_reduced(s)
    _, _, f = reduced_drifts(red, zg)
    N = stable_steps(f, zg.spacing, cfg.horizon, cfg.courant)
    return solve_hjb_effective(red, build_cost(cfg), zg, N, courant=cfg.courant)


def _value_job(args):
    cfg, eps, budget = args
    out, wall = _timed(lambda e: value_point(cfg, e, budget_nodes=budget), eps)
    out.pop("full")
    return out, wall


def run_value_sweep(cfg: ExperimentConfig, jobs: int = 1, budget_nodes: Optional[int] = None):
    """Value-function gap ``|V_eps - V_0|`` for each epsilon."""
    results = _run_jobs(_value_job, [(cfg, e, budget_nodes) for e in cfg.epsilons], jobs)
    cols = ["epsilon", "gap_equilibrium", "gap_full", "steps", "h", "ratio"]
    rows, prev = [], None
    for res, _ in results:
        g = res["gap_equilibrium"]
        ratio = None if prev is None or prev == 0 else g / prev
        rows.append([res["epsilon"], g, res["gap_full"], res["steps"], res["h"], ratio])
        prev = g
    timing = Table(f"{cfg.name}_timing", ["epsilon", "wall_seconds"],
                   [[r["epsilon"], w] for r, w in results])
    return Table(cfg.name, cols, rows), timing


# --------------------------------------------------------------------------- cell validation

def _cell_inputs(cfg: ExperimentConfig, sys: TwoScaleSystem):
    rng = np.random.default_rng(cfg.seed)
    z = np.asarray(cfg.cell.z, float) if cfg.cell.z is not None else rng.uniform(-1, 1, sys.m)
    p = np.asarray(cfg.cell.p, float) if cfg.cell.p is not None else rng.uniform(-2, 2, sys.m)
    return z, p


def _cell_job(args):
    cfg, delta = args

    def work(dl):
        model = build_model(cfg)
        s = model.system
        z, p = _cell_inputs(cfg, s)
        grid = cfg.cell.grid.build() if cfg.cell.grid else Grid([-2.0] * s.n, [2.0] * s.n,
                                                                   (201,) * s.n)
        ref = None if cfg.cell.reference is None else cfg.cell.reference
        return solve_cell(s, z, p, grid, dl, reference=ref, mode=cfg.cell.mode)

    return _timed(work, delta)


def run_cell_validation(cfg: ExperimentConfig, jobs: int = 1):
    """Discounted cell estimates against the closed-form ergodic constant."""
    model = build_model(cfg)
    s = model.system
    if isinstance(s, ThreeScaleSystem):
        raise ConfigError("cell validation runs on two-scale models")
    z, p = _cell_inputs(cfg, s)
    exact = lambda1_closed_form(s, z, p)
    results = _run_jobs(_cell_job, [(cfg, d) for d in cfg.cell.deltas], jobs)
    cols = (["delta"] + [f"z_{i}" for i in range(s.m)] + [f"p_{i}" for i in range(s.m)]
            + ["lambda_closed", "lambda_discounted", "relative_gap", "corrector_amplitude",
               "iterations"])
    rows = []
    for d, (cell, _) in zip(cfg.cell.deltas, results):
        gap = abs(cell.lam - exact) / abs(exact) if exact != 0 else abs(cell.lam)
        rows.append([d] + list(z) + list(p)
                    + [exact, cell.lam, gap, float(np.max(np.abs(cell.corrector))), cell.iterations])
    timing = Table(f"{cfg.name}_timing", ["delta", "wall_seconds"],
                   [[d, w] for d, (_, w) in zip(cfg.cell.deltas, results)])
    return Table(cfg.name, cols, rows), timing


# --------------------------------------------------------------------------- occupational measure

@dataclass(frozen=True)
class OccupationalHistogram:
    """Time-fraction histogram of the frozen-slow fast flow."""

    edges: tuple
    masses: np.ndarray
    z: np.ndarray
    beta: np.ndarray
    horizon: float
    psi: np.ndarray

    def bin_of(self, y) -> tuple:
        y = np.atleast_1d(y)
        return tuple(int(np.clip(np.searchsorted(e, v, side="right") - 1, 0, len(e) - 2))
                     for e, v in zip(self.edges, y))

    def mass_near(self, radius_bins: int = 1) -> float:
        """Mass in the ``(2r+1)**n`` block of bins around the bin holding ``psi``."""
        c = self.bin_of(self.psi)
        sl = tuple(slice(max(i - radius_bins, 0), i + radius_bins + 1) for i in c)
        return float(self.masses[sl].sum())


def estimate_occupational_measure(sys: TwoScaleSystem, z, beta, horizon: float, bins: int = 50,
                                  box: Optional[ControlBox] = None, y0=None,
                                  samples: int = 200_000) -> OccupationalHistogram:
    """Histogram of ``y(t)``, ``t`` in ``[0, horizon]``, for ``dy/dt = A2 y + B2 beta + C2``.

    The slow state is frozen at ``z`` and the flow is taken in fast time
    (``eps = 1``), using the exact solution ``psi + exp(A2 t)(y0 - psi)``
    sampled at ``samples`` midpoints of equal time cells.
    """
    z = np.asarray(z, dtype=float)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    psi = solve_static(sys, z, beta)
    A2 = sys.A2(z)
    y0 = psi.copy() if y0 is None else np.asarray(y0, dtype=float)
    if box is None:
        box = ControlBox(psi - 5.0, psi + 5.0)
    t = (np.arange(samples) + 0.5) * (horizon / samples)
    # eigen-decomposition keeps the sampling vectorized
    lam, V = np.linalg.eig(A2)
    coef = np.linalg.solve(V, (y0 - psi).astype(complex))
    traj = (np.exp(np.outer(t, lam)) * coef) @ V.T
    ys = psi + traj.real
    if np.any(ys < box.lower) or np.any(ys > box.upper):
        raise BoundsExceeded("fast state left the histogram box")
    edges = tuple(np.linspace(lo, hi, bins + 1) for lo, hi in zip(box.lower, box.upper))
    counts, _ = np.histogramdd(ys, bins=edges)
    masses = counts / counts.sum()
    return OccupationalHistogram(edges, masses, z, beta, float(horizon), psi)


def decay_time(sys: TwoScaleSystem, z) -> float:
    """``1 / |max Re eig A2(z)|``, the slowest relaxation time."""
    rate = -np.max(np.linalg.eigvals(sys.A2(np.asarray(z, dtype=float))).real)
    return 1.0 / rate


def run_occupational(cfg: ExperimentConfig):
    model = build_model(cfg, 1.0)
    s = model.system
    if isinstance(s, ThreeScaleSystem):
        s = s.embedded_two_scale()
    oc = cfg.occupational
    z = model.z0 if oc.z is None else np.asarray(oc.z, float)
    beta = s.omega_B.center if oc.beta is None else np.asarray(oc.beta, float)
    psi = solve_static(s, z, beta)
    y0 = None if oc.offset is None else psi + np.asarray(oc.offset, float)
    T = oc.decay_times * decay_time(s, z)
    box = ControlBox(psi - oc.half_width, psi + oc.half_width)
    hist = estimate_occupational_measure(s, z, beta, T, oc.bins, box, y0, oc.samples)
    cols = [f"bin_{i}" for i in range(s.n)] + ["mass"]
    rows = [list(idx) + [float(m)] for idx, m in np.ndenumerate(hist.masses) if m > 0]
    summary = Table(f"{cfg.name}_summary", ["horizon", "bins", "radius_bins", "mass_near",
                                            "total_mass"],
                    [[T, oc.bins, oc.radius_bins, hist.mass_near(oc.radius_bins),
                      float(hist.masses.sum())]])
    return Table(cfg.name, cols, rows), summary, hist


# --------------------------------------------------------------------------- plots

def emit_plots(tables: Sequence[Table], out_dir) -> List[Path]:
    """Write one static plot per metric column; returns the created files."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    made = []
    for tab in tables:
        if not tab.rows:
            warnings.warn(f"table {tab.name} is empty; no plot written")
            continue
        if "mass" in tab.columns and any(c.startswith("bin_") for c in tab.columns):
            made.append(_heatmap(plt, tab, out_dir))
            continue
        xname = tab.columns[0]
        x = tab.column(xname)
        for col in tab.columns[1:]:
            if col in ("ratio", "steps", "iterations") or col.startswith(("z_", "p_")):
                continue
            try:
                y = tab.column(col)
            except (TypeError, ValueError):
                continue
            fig, ax = plt.subplots(figsize=(4.5, 3.5))
            ok = (x > 0) & (np.abs(y) > 0) & np.isfinite(y)
            if ok.sum() >= 1 and np.all(x[ok] > 0):
                ax.loglog(x[ok], np.abs(y[ok]), "o-")
            else:
                ax.plot(x, y, "o-")
            ax.set_xlabel(xname)
            ax.set_ylabel(col)
            ax.set_title(f"{tab.name}: {col}")
            fig.tight_layout()
            path = out_dir / f"{tab.name}_{col}.png"
            fig.savefig(path, metadata={"Software": None})
            plt.close(fig)
            made.append(path)
    return made


def _heatmap(plt, tab: Table, out_dir: Path) -> Path:
    bcols = [c for c in tab.columns if c.startswith("bin_")]
    idx = np.array([[int(r[tab.columns.index(c)]) for c in bcols] for r in tab.rows])
    mass = tab.column("mass")
    shape = tuple(idx.max(axis=0) + 1)
    grid = np.zeros(shape)
    grid[tuple(idx.T)] = mass
    fig, ax = plt.subplots(figsize=(4.5, 4))
    if grid.ndim == 1:
        ax.bar(np.arange(grid.size), grid)
    else:
        img = grid if grid.ndim == 2 else grid.sum(axis=tuple(range(2, grid.ndim)))
        ax.imshow(img.T, origin="lower", cmap="viridis")
    ax.set_title(f"{tab.name}: occupation")
    fig.tight_layout()
    path = out_dir / f"{tab.name}_histogram.png"
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path
