"""Semi-Lagrangian dynamic programming on rectangular grids.

Value functions use the forward-in-horizon convention ``V(z, 0) = phi(z)``
and the update

    V^{k+1}(z) = min_c { h * l(z) + V^k(z + h f(z, c)) }

where ``c`` ranges over the vertices and centre of every control box and
``V^k`` is read by multilinear interpolation with constant extrapolation.
The feet of the characteristics do not depend on time, so each candidate
control contributes one sparse interpolation matrix built up front.

Cell problems are solved by the vanishing-discount method on a fast grid
treated as periodic.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import (CflViolation, DimensionMismatch, GridMismatch, GridTooLarge,
                     NoConvergence, NonFiniteValue, NotAffine)
from .reduction import ReducedSystem, build_reduced, cascade_reduce, solve_static
from .system import ControlBox, CostSpec, ThreeScaleSystem, TwoScaleSystem

log = logging.getLogger(__name__)

#: Default cap on the number of grid nodes accepted by the full solver.
DEFAULT_NODE_BUDGET = 250_000


@dataclass(frozen=True)
class Grid:
    """Tensor grid with ``nodes[i]`` equispaced points on ``[lower[i], upper[i]]``."""

    lower: np.ndarray
    upper: np.ndarray
    nodes: tuple

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        nodes = tuple(int(n) for n in np.atleast_1d(self.nodes))
        if lo.shape != hi.shape or lo.ndim != 1 or len(nodes) != lo.size:
            raise DimensionMismatch("grid bounds and node counts disagree in dimension")
        if any(n < 3 for n in nodes):
            raise ValueError("every axis needs at least 3 nodes")
        if np.any(lo >= hi):
            raise ValueError("grid requires lower < upper on every axis")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "nodes", nodes)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def shape(self) -> tuple:
        return self.nodes

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes))

    @property
    def spacing(self) -> np.ndarray:
        return (self.upper - self.lower) / (np.array(self.nodes) - 1)

    @property
    def axes(self):
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.nodes)]

    def points(self) -> np.ndarray:
        """Node coordinates, one row per node, in C (last axis fastest) order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def sub(self, axes: Sequence[int]) -> "Grid":
        axes = list(axes)
        return Grid(self.lower[axes], self.upper[axes], tuple(self.nodes[i] for i in axes))

    def same_as(self, other: "Grid") -> bool:
        return (self.nodes == other.nodes and np.allclose(self.lower, other.lower)
                and np.allclose(self.upper, other.upper))

    def nearest(self, point) -> int:
        point = np.atleast_1d(np.asarray(point, dtype=float))
        idx = np.rint((point - self.lower) / self.spacing).astype(int)
        idx = np.clip(idx, 0, np.array(self.nodes) - 1)
        return int(np.ravel_multi_index(tuple(idx), self.nodes))


def interpolation_matrix(grid: Grid, points: np.ndarray, periodic: bool = False) -> sp.csr_matrix:
    """Sparse multilinear interpolation weights from grid nodes to ``points``.

    Points outside the grid are clamped to the boundary, or wrapped around
    when ``periodic`` is set.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != grid.dim:
        raise DimensionMismatch(f"points have dimension {pts.shape[1]}, grid has {grid.dim}")
    P = pts.shape[0]
    lo_idx, frac = [], []
    for a, (lo, hi, n, dx) in enumerate(zip(grid.lower, grid.upper, grid.nodes, grid.spacing)):
        x = pts[:, a]
        if periodic:
            x = lo + np.mod(x - lo, hi - lo)
        else:
            x = np.clip(x, lo, hi)
        s = (x - lo) / dx
        i = np.clip(np.floor(s).astype(np.int64), 0, n - 2)
        lo_idx.append(i)
        frac.append(np.clip(s - i, 0.0, 1.0))
    rows, cols, vals = [], [], []
    for corner in itertools.product((0, 1), repeat=grid.dim):
        w = np.ones(P)
        idx = []
        for a, bit in enumerate(corner):
            w = w * (frac[a] if bit else 1.0 - frac[a])
            idx.append(lo_idx[a] + bit)
        rows.append(np.arange(P))
        cols.append(np.ravel_multi_index(tuple(idx), grid.nodes))
        vals.append(w)
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(P, grid.size))
    return mat.tocsr()


@dataclass(frozen=True)
class GridValueFunction:
    """Nodal values ``values[k]`` (shaped like the grid) at horizon ``times[k]``."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.times),) + self.grid.shape:
            raise DimensionMismatch("value array does not match grid and time slices")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteValue("value function contains non-finite entries")

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def interpolate(self, points, slice_index: int = -1) -> np.ndarray:
        W = interpolation_matrix(self.grid, points)
        return W @ self.values[slice_index].ravel()

    def to_csv(self, path) -> None:
        pts = self.grid.points()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slice"] + [f"axis_{i}" for i in range(self.grid.dim)] + ["value"])
            for k in range(len(self.times)):
                flat = self.values[k].ravel()
                for node, v in zip(pts, flat):
                    w.writerow([k] + [f"{c:.17g}" for c in node] + [f"{v:.17g}"])


@dataclass(frozen=True)
class CellResult:
    """Ergodic constant and normalized corrector of a cell problem."""

    lam: float
    corrector: np.ndarray
    reference: int
    grid: Grid
    residual: float
    iterations: int
    history: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))


def control_candidates(boxes: Sequence[ControlBox]):
    """Cartesian product of per-box candidate sets, as tuples of control vectors."""
    return list(itertools.product(*[list(b.candidates()) for b in boxes]))


def _march(weights, terminal, running, h, steps, grid, save_every):
    V = terminal.copy()
    keep = [0]
    slices = [V.copy()]
    for k in range(1, steps + 1):
        cand = np.vstack([W @ V for W in weights])
        V = h * running + cand.min(axis=0)
        if k % save_every == 0 or k == steps:
            if not np.all(np.isfinite(V)):
                raise NonFiniteValue(f"non-finite value at step {k}")
            keep.append(k)
            slices.append(V.copy())
    times = np.array(keep, dtype=float) * h
    return GridValueFunction(grid, times, np.stack(slices).reshape((len(keep),) + grid.shape))


def _cfl(feet_disp, spacing, courant, candidates, nodes):
    ratio = np.max(np.abs(feet_disp) / spacing, axis=-1)  # (ncand, nnodes)
    worst = np.unravel_index(np.argmax(ratio), ratio.shape)
    if ratio[worst] > courant:
        raise CflViolation(
            f"Courant number {ratio[worst]:.4g} exceeds {courant} at node {nodes[worst[1]]}",
            node=nodes[worst[1]], control=candidates[worst[0]], courant=float(ratio[worst]))
    return float(ratio[worst])


def _default_save(steps):
    return max(1, steps // 100)


def _as_reduced(obj) -> ReducedSystem:
    if isinstance(obj, ReducedSystem):
        return obj
    if isinstance(obj, TwoScaleSystem):
        return build_reduced(obj)
    if isinstance(obj, ThreeScaleSystem):
        return cascade_reduce(obj)[1]
    raise TypeError(f"cannot build reduced dynamics from {type(obj).__name__}")


def reduced_drifts(red, grid: Grid) -> tuple:
    """Reduced drift at every node for every candidate control, shape (ncand, nnodes, m)."""
    red = _as_reduced(red)
    if grid.dim != red.m:
        raise DimensionMismatch(f"grid dimension {grid.dim} differs from state dimension {red.m}")
    cands = control_candidates(red.boxes)
    pts = grid.points()
    f = np.array([[red.rhs(z, *c) for z in pts] for c in cands])
    return cands, pts, f


def stable_steps(drift: np.ndarray, spacing: np.ndarray, horizon: float, courant: float = 1.0) -> int:
    """Smallest step count whose step size respects the Courant bound for ``drift``."""
    speed = np.max(np.abs(drift) / spacing)
    if speed == 0:
        return 1
    return int(np.ceil(horizon * speed / courant))


def solve_hjb_effective(red: Union[ReducedSystem, TwoScaleSystem, ThreeScaleSystem],
                        cost: CostSpec, grid: Grid, steps: int, courant: float = 1.0,
                        save_every: Optional[int] = None) -> GridValueFunction:
    """Semi-Lagrangian march of the reduced (effective) HJB equation."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cands, pts, f = reduced_drifts(red, grid)
    h = cost.horizon / steps
    _cfl(h * f, grid.spacing, courant, cands, pts)
    weights = [interpolation_matrix(grid, pts + h * fc) for fc in f]
    terminal = np.array([cost.terminal(z) for z in pts], dtype=float)
    running = np.array([cost.running(z) for z in pts], dtype=float)
    return _march(weights, terminal, running, h, steps, grid,
                  save_every or _default_save(steps))


def solve_hjb_multiscale_effective(sys3: ThreeScaleSystem, cost: CostSpec, grid: Grid,
                                   steps: int, courant: float = 1.0,
                                   save_every: Optional[int] = None) -> GridValueFunction:
    """Macro HJB of a three-scale system after eliminating both fast scales.

    Its Hamiltonian is ``-p.C1 + sup_alpha + lambda1 + lambda2``; the vertex
    search over ``(alpha, beta, gamma)`` realizes it exactly.
    """
    _, macro = cascade_reduce(sys3)
    return solve_hjb_effective(macro, cost, grid, steps, courant, save_every)


def _full_drifts(sys, pts, cands):
    # Fields are evaluated once per node; controls enter linearly.
    ctrl = [np.array([c[i] for c in cands]) for i in range(len(cands[0]))]
    three = isinstance(sys, ThreeScaleSystem)
    m, n = sys.m, sys.n
    out = np.empty((len(cands), len(pts), pts.shape[1]))
    for j, s in enumerate(pts):
        z, y = s[:m], s[m:m + n]
        if three:
            x = s[m + n:]
            slow = sys.A0(z) @ x + sys.A1(z) @ y + sys.C1(z)
            micro = (sys.A3(z) @ x + sys.C3(z) + ctrl[2] @ sys.B3(z).T) / sys.micro_epsilon
            out[:, j, m + n:] = micro
        else:
            slow = sys.A1(z) @ y + sys.C1(z)
            if sys.slow_extra is not None:
                slow = slow + sys.slow_extra(z, y)
        out[:, j, :m] = slow + ctrl[0] @ sys.B1(z).T
        out[:, j, m:m + n] = (sys.A2(z) @ y + sys.C2(z) + ctrl[1] @ sys.B2(z).T) / sys.epsilon
    return out


def full_drifts(sys, grid: Grid):
    """Scaled drift of the full system at every node and candidate control."""
    if isinstance(sys, ThreeScaleSystem):
        dims, boxes = sys.m + sys.n + sys.l, (sys.omega_A, sys.omega_B, sys.omega_G)
    else:
        dims, boxes = sys.m + sys.n, (sys.omega_A, sys.omega_B)
    if grid.dim != dims:
        raise DimensionMismatch(f"grid dimension {grid.dim} differs from state dimension {dims}")
    cands = control_candidates(boxes)
    pts = grid.points()
    return cands, pts, _full_drifts(sys, pts, cands)


def solve_hjb_full(sys: Union[TwoScaleSystem, ThreeScaleSystem], cost: CostSpec, grid: Grid,
                   steps: int, courant: float = 1.0, budget_nodes: int = DEFAULT_NODE_BUDGET,
                   save_every: Optional[int] = None) -> GridValueFunction:
    """Semi-Lagrangian march of the HJB equation over the product of slow and fast grids.

    The fast drift is scaled by ``1/eps`` (and the micro drift by
    ``1/eps**2``), so the Courant bound forces ``h = O(eps * dy)``.
    Costs read only the slow coordinates.
    """
    if grid.size > budget_nodes:
        raise GridTooLarge(f"grid has {grid.size} nodes, budget is {budget_nodes}", nodes=grid.size)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    cands, pts, f = full_drifts(sys, grid)
    h = cost.horizon / steps
    _cfl(h * f, grid.spacing, courant, cands, pts)
    weights = [interpolation_matrix(grid, pts + h * fc) for fc in f]
    m = sys.m
    terminal = np.array([cost.terminal(s[:m]) for s in pts], dtype=float)
    running = np.array([cost.running(s[:m]) for s in pts], dtype=float)
    return _march(weights, terminal, running, h, steps, grid,
                  save_every or _default_save(steps))


def solve_cell(sys: TwoScaleSystem, z, p, grid: Grid, delta: float, reference=None,
               mode: str = "exact", tau: Optional[float] = None, tol: float = 1e-8,
               max_iter: int = 500_000, courant: float = 1.0) -> CellResult:
    """Ergodic constant and corrector of the cell problem at frozen ``(z, p)``.

    Solves the discounted problem ``w = min_beta { cost + kappa * w(foot) }``
    by value iteration, with running cost ``p . A1(z) y`` along the frozen
    fast flow. ``mode="exact"`` follows the affine flow exactly over a
    pseudo-step ``tau`` (default 1); ``mode="euler"`` takes an explicit step
    subject to the Courant bound. The constant is ``-(1 - kappa)/tau * w(ref)``,
    which tends to ``-delta * w(ref)`` as ``tau -> 0``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not sys.is_affine:
        raise NotAffine("cell problem needs a slow drift affine in the fast state")
    z = np.asarray(z, dtype=float)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if grid.dim != sys.n:
        raise DimensionMismatch(f"fast grid has dimension {grid.dim}, fast state has {sys.n}")
    ys = grid.points()
    A1, A2, B2, C2 = sys.A1(z), sys.A2(z), sys.B2(z), sys.C2(z)
    coupling = A1.T @ p  # running cost is coupling . y
    betas = sys.omega_B.candidates()
    costs, feet = [], []
    if mode == "exact":
        tau = 1.0 if tau is None else float(tau)
        E = scipy.linalg.expm(A2 * tau)
        Ainv = np.linalg.inv(A2)
        transient = (Ainv @ (E - np.eye(sys.n))).T @ coupling
        for b in betas:
            psi = solve_static(sys, z, b)
            dev = ys - psi
            feet.append(psi + dev @ E.T)
            costs.append(tau * coupling @ psi + dev @ transient)
        kappa = np.exp(-delta * tau)
    elif mode == "euler":
        drift = np.array([ys @ A2.T + B2 @ b + C2 for b in betas])
        if tau is None:
            speed = np.max(np.abs(drift) / grid.spacing)
            tau = courant / speed if speed > 0 else 1.0
        tau = float(tau)
        _cfl(tau * drift, grid.spacing, courant, list(betas), ys)
        for k in range(len(betas)):
            feet.append(ys + tau * drift[k])
            costs.append(tau * ys @ coupling)
        kappa = 1.0 / (1.0 + delta * tau)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    weights = [interpolation_matrix(grid, ft, periodic=True) for ft in feet]
    costs = np.array(costs)
    if reference is None:
        ref = grid.size // 2
    elif isinstance(reference, (int, np.integer)):
        ref = int(reference)
    else:
        ref = grid.nearest(reference)
    w = np.zeros(grid.size)
    history = []
    residual = np.inf
    for it in range(1, max_iter + 1):
        w_new = np.min(costs + kappa * np.vstack([W @ w for W in weights]), axis=0)
        residual = float(np.max(np.abs(w_new - w)))
        history.append(residual)
        w = w_new
        if residual <= tol:
            break
    else:
        raise NoConvergence(f"value iteration stalled at residual {residual:.3e}", residual=residual)
    lam = -(1.0 - kappa) / tau * w[ref]
    corrector = (w - w[ref]).reshape(grid.shape)
    return CellResult(float(lam), corrector, ref, grid, residual, it, np.array(history))


def solve_micro_cell(sys3: ThreeScaleSystem, z, p, grid: Grid, delta: float, **kwargs) -> CellResult:
    """Micro cell problem: ``solve_cell`` with ``(A0, A3, B3, C3)`` in place of ``(A1, A2, B2, C2)``."""
    proxy = TwoScaleSystem(A1=sys3.A0, A2=sys3.A3, B1=sys3.B1, B2=sys3.B3, C1=sys3.C1,
                           C2=sys3.C3, omega_A=sys3.omega_A, omega_B=sys3.omega_G,
                           epsilon=sys3.micro_epsilon)
    return solve_cell(proxy, z, p, grid, delta, **kwargs)


@dataclass(frozen=True)
class ExpansionReport:
    epsilon: float
    remainder: float
    first_order_gap: float
    z_index: int

    @property
    def epsilon_sq(self) -> float:
        return self.epsilon ** 2

    @property
    def ratio(self) -> float:
        """Remainder over ``eps**2``; infinite when ``eps == 0`` and the remainder is not."""
        if self.epsilon == 0:
            return 0.0 if self.remainder == 0 else np.inf
        return self.remainder / self.epsilon ** 2


def expansion_check(full: GridValueFunction, effective: GridValueFunction, cell: CellResult,
                    epsilon: float, z=None, slice_index: int = -1) -> ExpansionReport:
    """Compare ``V_eps`` against ``V_0 + eps * V_1`` on the slice ``z`` frozen.

    ``full`` lives on the product of the effective (slow) grid and the cell
    (fast) grid. A ``full`` on the slow grid alone is read as constant in
    the fast variable.
    """
    zg, yg = effective.grid, cell.grid
    if full.grid.dim == zg.dim:
        if not full.grid.same_as(zg):
            raise GridMismatch("full and effective value functions use different grids")
        vfull = np.repeat(full.values[slice_index].reshape(-1, 1), yg.size, axis=1)
    else:
        m = zg.dim
        if full.grid.dim != m + yg.dim:
            raise GridMismatch("full grid is not the product of the slow and fast grids")
        if not (full.grid.sub(range(m)).same_as(zg) and full.grid.sub(range(m, m + yg.dim)).same_as(yg)):
            raise GridMismatch("full grid axes do not match the slow and fast grids")
        vfull = full.values[slice_index].reshape(zg.size, yg.size)
    if not np.isclose(full.times[slice_index], effective.times[slice_index]):
        raise GridMismatch("value functions are compared at different horizons")
    v0 = effective.values[slice_index].ravel()
    zi = zg.size // 2 if z is None else zg.nearest(z)
    gap = np.abs(vfull[zi] - v0[zi])
    rem = np.abs(vfull[zi] - v0[zi] - epsilon * cell.corrector.ravel())
    return ExpansionReport(float(epsilon), float(rem.max()), float(gap.max()), zi)
