"""Time integration of stiff, reduced and three-scale controlled systems.

The stiff blocks are advanced by implicit Euler in their linear part with
the matrices frozen at the current slow state; the slow block is explicit.
Reduced systems use classical RK4. Controls are piecewise constant and are
sampled at the start of each step.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from .errors import (BoundsExceededWarning, DimensionMismatch, GridMismatch,
                     NonFiniteState, SingularFastMatrix)
from .reduction import ReducedSystem
from .system import ControlBox, ThreeScaleSystem, TwoScaleSystem

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant control: ``values[k]`` holds on ``[t_k, t_{k+1})``."""

    breakpoints: np.ndarray
    values: np.ndarray
    box: ControlBox

    def __post_init__(self):
        t = np.asarray(self.breakpoints, dtype=float).ravel().copy()
        v = np.asarray(self.values, dtype=float).copy()
        if v.ndim == 1:
            v = v.reshape(-1, self.box.dim) if self.box.dim > 1 else v.reshape(-1, 1)
        if t.size < 2 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must start at 0 and increase strictly")
        if v.shape != (t.size - 1, self.box.dim):
            raise DimensionMismatch(
                f"values have shape {v.shape}, expected {(t.size - 1, self.box.dim)}")
        for k, val in enumerate(v):
            if not self.box.contains(val, tol=1e-12):
                raise ValueError(f"control value {val} on interval {k} leaves the box")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "breakpoints", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value, horizon: float, box: ControlBox) -> "ControlSignal":
        return cls(np.array([0.0, horizon]), np.atleast_2d(np.asarray(value, dtype=float)), box)

    @classmethod
    def uniform(cls, values, horizon: float, box: ControlBox) -> "ControlSignal":
        """Equal-length pieces, one per row of ``values``."""
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        return cls(np.linspace(0.0, horizon, v.shape[0] + 1), v, box)

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    def __call__(self, t: float) -> np.ndarray:
        k = np.searchsorted(self.breakpoints, t, side="right") - 1
        return self.values[min(max(k, 0), self.values.shape[0] - 1)]


@dataclass(frozen=True)
class Trajectory:
    """Uniform time grid with stacked states and named column slices."""

    times: np.ndarray
    states: np.ndarray
    layout: Mapping[str, slice] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.states[:, self.layout[name]]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def header(self):
        cols = []
        claimed = {}
        # Label each column once, using the narrowest named slice covering it.
        for name, sl in sorted(self.layout.items(), key=lambda kv: kv[1].stop - kv[1].start):
            for j in range(sl.start, sl.stop):
                if j not in claimed:
                    claimed[j] = f"{name}_{j - sl.start}"
        for j in range(self.states.shape[1]):
            cols.append(claimed.get(j, f"x_{j}"))
        return ["time"] + cols

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for t, row in zip(self.times, self.states):
                w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in row])


def _check_signals(signals: Sequence[ControlSignal], steps: int) -> float:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    horizons = {s.horizon for s in signals}
    if len(horizons) != 1:
        raise ValueError(f"control signals have different horizons {sorted(horizons)}")
    return horizons.pop()


def _layout(blocks: Sequence[tuple], names: Optional[Dict[str, slice]]) -> Dict[str, slice]:
    out = {}
    start = 0
    for label, width in blocks:
        out[label] = slice(start, start + width)
        start += width
    if names:
        for k, sl in names.items():
            if sl.stop > start:
                continue
            out[k] = sl
    return out


def _implicit(z_mat: np.ndarray, rhs: np.ndarray, step: int) -> np.ndarray:
    try:
        return np.linalg.solve(z_mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularFastMatrix(f"implicit matrix singular at step {step}") from exc


def _monitor(y, bounds: Optional[ControlBox], step: int, label: str, flagged: list) -> None:
    if bounds is not None and not flagged and not bounds.contains(y):
        flagged.append(step)
        warnings.warn(f"{label} state left the monitoring box at step {step}",
                      BoundsExceededWarning, stacklevel=3)


def integrate_stiff(sys: TwoScaleSystem, alpha: ControlSignal, beta: ControlSignal,
                    z0, y0, steps: int, names: Optional[Dict[str, slice]] = None,
                    bounds: Optional[ControlBox] = None) -> Trajectory:
    """IMEX Euler march of the two-scale system on ``steps`` uniform steps."""
    T = _check_signals([alpha, beta], steps)
    h = T / steps
    z = np.array(z0, dtype=float).ravel()
    y = np.array(y0, dtype=float).ravel()
    if z.shape != (sys.m,) or y.shape != (sys.n,):
        raise DimensionMismatch("initial state does not match the system dimensions")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
        raise NonFiniteState("initial state is not finite", step=0)
    r = h / sys.epsilon
    eye = np.eye(sys.n)
    times = np.linspace(0.0, T, steps + 1)
    out = np.empty((steps + 1, sys.m + sys.n))
    out[0, :sys.m], out[0, sys.m:] = z, y
    flagged: list = []
    for k in range(steps):
        a, b = alpha(times[k]), beta(times[k])
        z_new = z + h * sys.slow_drift(z, y, a)
        A2 = sys.A2(z)
        y = _implicit(eye - r * A2, y + r * (sys.B2(z) @ b + sys.C2(z)), k + 1)
        z = z_new
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
            raise NonFiniteState(f"state overflowed at step {k + 1}", step=k + 1)
        _monitor(y, bounds, k + 1, "fast", flagged)
        out[k + 1, :sys.m], out[k + 1, sys.m:] = z, y
    return Trajectory(times, out, _layout([("slow", sys.m), ("fast", sys.n)], names))


def integrate_reduced(red: ReducedSystem, *signals: ControlSignal, z0, steps: int,
                      names: Optional[Dict[str, slice]] = None) -> Trajectory:
    """Classical RK4 march of ``red.rhs`` with piecewise-constant controls."""
    if len(signals) != len(red.boxes):
        raise DimensionMismatch(f"expected {len(red.boxes)} control signals, got {len(signals)}")
    T = _check_signals(signals, steps)
    h = T / steps
    z = np.array(z0, dtype=float).ravel()
    if z.shape != (red.m,):
        raise DimensionMismatch("initial state does not match the reduced dimension")
    times = np.linspace(0.0, T, steps + 1)
    out = np.empty((steps + 1, red.m))
    out[0] = z
    for k in range(steps):
        c = [s(times[k]) for s in signals]
        k1 = red.rhs(z, *c)
        k2 = red.rhs(z + 0.5 * h * k1, *c)
        k3 = red.rhs(z + 0.5 * h * k2, *c)
        k4 = red.rhs(z + h * k3, *c)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(z)):
            raise NonFiniteState(f"state overflowed at step {k + 1}", step=k + 1)
        out[k + 1] = z
    return Trajectory(times, out, _layout([("slow", red.m)], names))


def integrate_three_scale(sys3: ThreeScaleSystem, alpha: ControlSignal, beta: ControlSignal,
                          gamma: ControlSignal, z0, y0, x0, steps: int,
                          names: Optional[Dict[str, slice]] = None,
                          bounds: Optional[ControlBox] = None) -> Trajectory:
    """IMEX Euler with implicit meso (``h/eps``) and micro (``h/eps**2``) blocks."""
    T = _check_signals([alpha, beta, gamma], steps)
    h = T / steps
    z = np.array(z0, dtype=float).ravel()
    y = np.array(y0, dtype=float).ravel()
    x = np.array(x0, dtype=float).ravel()
    if z.shape != (sys3.m,) or y.shape != (sys3.n,) or x.shape != (sys3.l,):
        raise DimensionMismatch("initial state does not match the system dimensions")
    r2, r3 = h / sys3.epsilon, h / sys3.micro_epsilon
    e2, e3 = np.eye(sys3.n), np.eye(sys3.l)
    m, n = sys3.m, sys3.n
    times = np.linspace(0.0, T, steps + 1)
    out = np.empty((steps + 1, m + n + sys3.l))
    out[0] = np.concatenate([z, y, x])
    flagged: list = []
    for k in range(steps):
        a, b, g = alpha(times[k]), beta(times[k]), gamma(times[k])
        z_new = z + h * sys3.slow_drift(z, y, x, a)
        y = _implicit(e2 - r2 * sys3.A2(z), y + r2 * (sys3.B2(z) @ b + sys3.C2(z)), k + 1)
        x = _implicit(e3 - r3 * sys3.A3(z), x + r3 * (sys3.B3(z) @ g + sys3.C3(z)), k + 1)
        z = z_new
        row = np.concatenate([z, y, x])
        if not np.all(np.isfinite(row)):
            raise NonFiniteState(f"state overflowed at step {k + 1}", step=k + 1)
        _monitor(y, bounds, k + 1, "meso", flagged)
        out[k + 1] = row
    return Trajectory(times, out,
                      _layout([("slow", m), ("meso", n), ("micro", sys3.l)], names))


def trajectory_error(a: Trajectory, b: Trajectory, component: str) -> float:
    """Sup over grid times of the max-norm gap on the named slice."""
    if a.times.shape != b.times.shape or not np.array_equal(a.times, b.times):
        raise GridMismatch("trajectories live on different time grids")
    if component not in a.layout or component not in b.layout:
        raise GridMismatch(f"slice {component!r} missing from a trajectory layout")
    sa, sb = a[component], b[component]
    if sa.shape != sb.shape:
        raise GridMismatch(f"slice {component!r} has widths {sa.shape[1]} and {sb.shape[1]}")
    return float(np.max(np.abs(sa - sb)))
