"""Semi-discretized relaxation models as affine singularly perturbed systems.

All models live on a periodic grid ``x_i = i * dx`` with ``d`` cells.
Flux divergences use the periodic upwind matrix ``D`` (backward by default).
Terms that act as gradients feeding a wave back into a flux (``a D u`` in
Jin-Xin, ``D rho`` in Goldstein-Taylor, ``D(h + h**2/2)`` in shallow water)
use a second operator ``D_grad``. Taking it forward pairs it with the
backward divergence into the centred second difference ``D_b D_f``, which
keeps the wave part neutrally stable; ``gradient="same"`` reuses ``D``.

Control gains are ``d x k`` matrices (or callables of the controlled field
returning one). The default is a single scalar control acting through a
smooth spatial profile, with control box ``[-1, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from .errors import DensityFloor, DimensionMismatch, LayoutMismatch, NegativeTemperature
from .system import ControlBox, MatrixField, ThreeScaleSystem, TwoScaleSystem


@dataclass(frozen=True)
class DiscretizationOp:
    """Periodic first-order upwind difference matrix."""

    d: int
    dx: float
    variant: str
    matrix: np.ndarray

    def __call__(self, u) -> np.ndarray:
        return self.matrix @ u


def make_upwind(d: int, dx: float, variant: str = "backward") -> DiscretizationOp:
    """Backward ``(u_i - u_{i-1})/dx`` or forward ``(u_{i+1} - u_i)/dx``, indices mod ``d``."""
    if d < 3:
        raise ValueError("need at least 3 cells")
    if not dx > 0:
        raise ValueError("dx must be positive")
    eye = np.eye(d)
    if variant == "backward":
        M = (eye - np.roll(eye, -1, axis=1)) / dx
    elif variant == "forward":
        M = (np.roll(eye, 1, axis=1) - eye) / dx
    else:
        raise ValueError(f"unknown variant {variant!r}")
    M.setflags(write=False)
    return DiscretizationOp(d, float(dx), variant, M)


@dataclass(frozen=True)
class JinXinDiagonalization:
    """Eigen-decomposition ``T Lambda T^{-1}`` of the Jin-Xin flux matrix."""

    a: float
    T: np.ndarray
    Lambda: np.ndarray
    Tinv: np.ndarray

    @property
    def flux_matrix(self) -> np.ndarray:
        return np.array([[0.0, 1.0, 1.0], [self.a, 0.0, 0.0], [0.0, 0.0, 0.0]])

    def characteristic(self, u, nu, omega) -> np.ndarray:
        """Characteristic variables ``T^{-1} (u, nu, omega)``."""
        return self.Tinv @ np.array([u, nu, omega], dtype=float)


def jin_xin_diagonalize(a: float) -> JinXinDiagonalization:
    """Eigenvectors ``(0,-1,1)``, ``(a^{-1/2},1,0)``, ``(-a^{-1/2},1,0)`` for eigenvalues ``0, sqrt(a), -sqrt(a)``."""
    if not a > 0:
        raise ValueError("a must be positive")
    s = np.sqrt(a)
    T = np.array([[0.0, 1.0 / s, -1.0 / s], [-1.0, 1.0, 1.0], [1.0, 0.0, 0.0]])
    Lam = np.diag([0.0, s, -s])
    Tinv = np.array([[0.0, 0.0, 1.0], [s / 2, 0.5, 0.5], [-s / 2, 0.5, 0.5]])
    out = JinXinDiagonalization(float(a), T, Lam, Tinv)
    assert np.max(np.abs(T @ Tinv - np.eye(3))) <= 1e-12
    assert np.max(np.abs(T @ Lam @ Tinv - out.flux_matrix)) <= 1e-12 * max(1.0, a)
    return out


@dataclass(frozen=True)
class ModelInstance:
    """A zoo model: its system, state layout and equilibrium map.

    ``layout`` maps variable names to slices of the stacked state
    ``(z, y)`` or ``(z, y, x)``. ``equilibrium(z)`` returns the fast state
    (meso then micro for three-scale models) with zero fast controls.
    """

    name: str
    system: object
    layout: Dict[str, slice]
    equilibrium: Callable[[np.ndarray], np.ndarray]
    z0: np.ndarray
    fluxes: Dict[str, Callable] = field(default_factory=dict)
    gains: Dict[str, Callable] = field(default_factory=dict)
    params: Dict[str, object] = field(default_factory=dict)

    @property
    def three_scale(self) -> bool:
        return isinstance(self.system, ThreeScaleSystem)

    @property
    def state_dim(self) -> int:
        s = self.system
        return s.m + s.n + (s.l if self.three_scale else 0)

    @property
    def slow_layout(self) -> Dict[str, slice]:
        m = self.system.m
        return {k: v for k, v in self.layout.items() if v.stop <= m}

    def initial_state(self) -> np.ndarray:
        return np.concatenate([self.z0, self.equilibrium(self.z0)])

    def split(self, state):
        state = np.asarray(state, dtype=float).ravel()
        if state.size != self.state_dim:
            raise LayoutMismatch(f"state has {state.size} entries, layout needs {self.state_dim}")
        s = self.system
        if self.three_scale:
            return state[:s.m], state[s.m:s.m + s.n], state[s.m + s.n:]
        return state[:s.m], state[s.m:]


def _grid(d):
    return np.arange(d) / d


def _gain(g, d, default, name):
    """Normalize a gain to ``(callable(field) -> d x k, k)``."""
    if g is None:
        g = default
    if callable(g):
        probe = np.asarray(g(np.full(d, 0.5)), dtype=float)
        if probe.ndim != 2 or probe.shape[0] != d:
            raise DimensionMismatch(f"gain {name} returned shape {probe.shape}, expected ({d}, k)")
        return g, probe.shape[1]
    arr = np.asarray(g, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != d:
        raise DimensionMismatch(f"gain {name} has shape {arr.shape}, expected ({d}, k)")
    arr = arr.copy()
    arr.setflags(write=False)
    return (lambda u: arr), arr.shape[1]


def _profile(amp, phase, d):
    x = _grid(d)
    col = (amp * np.sin(2 * np.pi * x + phase))[:, None]
    col.setflags(write=False)
    return col


def _ops(d, dx, gradient):
    D = make_upwind(d, dx, "backward").matrix
    if gradient == "forward":
        Dg = make_upwind(d, dx, "forward").matrix
    elif gradient == "same":
        Dg = D
    else:
        raise ValueError(f"unknown gradient operator {gradient!r}")
    return D, Dg


def _stack(*blocks):
    return np.vstack(blocks)


def _box(k, half=1.0):
    return ControlBox.symmetric(half, k)


def _check_params(d, dx):
    if d < 3:
        raise ValueError("need at least 3 cells")
    dx = 1.0 / d if dx is None else float(dx)
    if not dx > 0:
        raise ValueError("dx must be positive")
    return dx


def jin_xin_two_scale(d: int = 16, dx: Optional[float] = None, a: float = 1.0, flux=None,
                      H=None, G=None, epsilon: float = 1e-2, gradient: str = "forward",
                      u0=None, w0=None) -> ModelInstance:
    """Controlled Jin-Xin relaxation; slow ``(u, v)``, fast ``w``.

    ``du = -D v - D w + H alpha``, ``dv = -a D_grad u``,
    ``eps dw = -(v - F(u) - G beta + w)``.
    """
    dx = _check_params(d, dx)
    if not a > 0:
        raise ValueError("a must be positive")
    F = flux or (lambda u: 0.5 * u * u)
    D, Dg = _ops(d, dx, gradient)
    Hf, p = _gain(H, d, _profile(0.5, 0.0, d), "H")
    Gf, q = _gain(G, d, _profile(0.1, 0.5, d), "G")
    I, Z = np.eye(d), np.zeros((d, d))
    m = 2 * d
    u_of = lambda z: z[:d]
    sys = TwoScaleSystem(
        A1=MatrixField.constant(_stack(-D, Z), "A1"),
        A2=MatrixField.constant(-I, "A2"),
        B1=MatrixField((m, p), lambda z: _stack(Hf(u_of(z)), np.zeros((d, p))), "B1"),
        B2=MatrixField((d, q), lambda z: Gf(u_of(z)), "B2"),
        C1=MatrixField((m,), lambda z: np.concatenate([-D @ z[d:], -a * (Dg @ z[:d])]), "C1"),
        C2=MatrixField((d,), lambda z: F(z[:d]) - z[d:], "C2"),
        omega_A=_box(p), omega_B=_box(q), epsilon=float(epsilon))
    u0 = 0.5 + 0.1 * np.sin(2 * np.pi * _grid(d)) if u0 is None else np.asarray(u0, float)
    w0 = np.zeros(d) if w0 is None else np.asarray(w0, float)
    z0 = np.concatenate([u0, F(u0) - w0])
    layout = {"u": slice(0, d), "v": slice(d, 2 * d), "w": slice(2 * d, 3 * d)}
    return ModelInstance("jin-xin-2", sys, layout, lambda z: F(z[:d]) - z[d:2 * d], z0,
                         {"F": F}, {"H": Hf, "G": Gf},
                         {"d": d, "dx": dx, "a": a, "gradient": gradient,
                          "diagonalization": jin_xin_diagonalize(a)})


def jin_xin_three_scale(d: int = 16, dx: Optional[float] = None, a: float = 1.0, b: float = 0.5,
                        flux0=None, flux1=None, H=None, G=None, K=None, epsilon: float = 1e-2,
                        gradient: str = "forward", u0=None) -> ModelInstance:
    """Three-scale Jin-Xin; slow ``(u, v, w)``, meso ``p``, micro ``q``."""
    dx = _check_params(d, dx)
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    F0 = flux0 or (lambda u: 0.5 * u * u)
    F1 = flux1 or (lambda u: 0.1 * u)
    D, Dg = _ops(d, dx, gradient)
    Hf, pa = _gain(H, d, _profile(0.5, 0.0, d), "H")
    Gf, qb = _gain(G, d, _profile(0.1, 0.5, d), "G")
    Kf, rg = _gain(K, d, _profile(0.1, 1.0, d), "K")
    I, Z = np.eye(d), np.zeros((d, d))
    m = 3 * d
    sys = ThreeScaleSystem(
        A0=MatrixField.constant(_stack(Z, I, Z), "A0"),
        A1=MatrixField.constant(_stack(-D, Z, Z), "A1"),
        A2=MatrixField.constant(-I, "A2"),
        A3=MatrixField.constant(-I, "A3"),
        B1=MatrixField((m, pa), lambda z: _stack(Hf(z[:d]), np.zeros((2 * d, pa))), "B1"),
        B2=MatrixField((d, qb), lambda z: Gf(z[:d]), "B2"),
        B3=MatrixField((d, rg), lambda z: Kf(z[:d]), "B3"),
        C1=MatrixField((m,), lambda z: np.concatenate(
            [-D @ z[d:2 * d], -a * (Dg @ z[:d]) + z[2 * d:], -b * (Dg @ z[:d])]), "C1"),
        C2=MatrixField((d,), lambda z: F0(z[:d]) - z[d:2 * d], "C2"),
        C3=MatrixField((d,), lambda z: F1(z[:d]) - z[2 * d:], "C3"),
        omega_A=_box(pa), omega_B=_box(qb), omega_G=_box(rg), epsilon=float(epsilon))
    u0 = 0.5 + 0.1 * np.sin(2 * np.pi * _grid(d)) if u0 is None else np.asarray(u0, float)
    z0 = np.concatenate([u0, F0(u0), F1(u0)])
    layout = {"u": slice(0, d), "v": slice(d, 2 * d), "w": slice(2 * d, 3 * d),
              "p": slice(3 * d, 4 * d), "q": slice(4 * d, 5 * d)}
    eq = lambda z: np.concatenate([F0(z[:d]) - z[d:2 * d], F1(z[:d]) - z[2 * d:]])
    return ModelInstance("jin-xin-3", sys, layout, eq, z0, {"F0": F0, "F1": F1},
                         {"H": Hf, "G": Gf, "K": Kf},
                         {"d": d, "dx": dx, "a": a, "b": b, "gradient": gradient})


def goldstein_taylor_two_scale(d: int = 16, dx: Optional[float] = None, H=None, G=None,
                               epsilon: float = 1e-2, gradient: str = "forward",
                               rho0=None) -> ModelInstance:
    """Goldstein-Taylor; slow ``rho``, fast ``J``. Reduces to the discrete heat flow."""
    dx = _check_params(d, dx)
    D, Dg = _ops(d, dx, gradient)
    Hf, p = _gain(H, d, _profile(0.5, 0.0, d), "H")
    Gf, q = _gain(G, d, _profile(0.1, 0.5, d), "G")
    I = np.eye(d)
    sys = TwoScaleSystem(
        A1=MatrixField.constant(-D, "A1"),
        A2=MatrixField.constant(-I, "A2"),
        B1=MatrixField((d, p), lambda z: Hf(z), "B1"),
        B2=MatrixField((d, q), lambda z: Gf(z), "B2"),
        C1=MatrixField.zeros((d,), "C1"),
        C2=MatrixField((d,), lambda z: -(Dg @ z), "C2"),
        omega_A=_box(p), omega_B=_box(q), epsilon=float(epsilon))
    rho0 = 1.0 + 0.2 * np.sin(2 * np.pi * _grid(d)) if rho0 is None else np.asarray(rho0, float)
    layout = {"rho": slice(0, d), "J": slice(d, 2 * d)}
    return ModelInstance("goldstein-taylor-2", sys, layout, lambda z: -(Dg @ z), rho0, {},
                         {"H": Hf, "G": Gf}, {"d": d, "dx": dx, "gradient": gradient})


def goldstein_taylor_three_scale(d: int = 16, dx: Optional[float] = None, a: float = 0.0,
                                 b: float = 0.0, flux1=None, H=None, G=None, K=None,
                                 epsilon: float = 1e-2, gradient: str = "forward",
                                 rho0=None) -> ModelInstance:
    """Three-scale Goldstein-Taylor; slow ``(rho, J, w)``, meso ``p``, micro ``q``."""
    dx = _check_params(d, dx)
    if a < 0 or b < 0:
        raise ValueError("a and b must be non-negative")
    F1 = flux1 or (lambda r: 0.1 * r)
    D, Dg = _ops(d, dx, gradient)
    Hf, pa = _gain(H, d, _profile(0.5, 0.0, d), "H")
    Gf, qb = _gain(G, d, _profile(0.1, 0.5, d), "G")
    Kf, rg = _gain(K, d, _profile(0.1, 1.0, d), "K")
    I, Z = np.eye(d), np.zeros((d, d))
    m = 3 * d
    sys = ThreeScaleSystem(
        A0=MatrixField.constant(_stack(Z, I, Z), "A0"),
        A1=MatrixField.constant(_stack(-D, Z, Z), "A1"),
        A2=MatrixField.constant(-I, "A2"),
        A3=MatrixField.constant(-I, "A3"),
        B1=MatrixField((m, pa), lambda z: _stack(Hf(z[:d]), np.zeros((2 * d, pa))), "B1"),
        B2=MatrixField((d, qb), lambda z: Gf(z[:d]), "B2"),
        B3=MatrixField((d, rg), lambda z: Kf(z[:d]), "B3"),
        C1=MatrixField((m,), lambda z: np.concatenate(
            [-D @ z[d:2 * d], -a * (Dg @ z[:d]) + z[2 * d:], -b * (Dg @ z[:d])]), "C1"),
        C2=MatrixField((d,), lambda z: -z[d:2 * d] - Dg @ z[:d], "C2"),
        C3=MatrixField((d,), lambda z: F1(z[:d]) - z[2 * d:], "C3"),
        omega_A=_box(pa), omega_B=_box(qb), omega_G=_box(rg), epsilon=float(epsilon))
    rho0 = 1.0 + 0.2 * np.sin(2 * np.pi * _grid(d)) if rho0 is None else np.asarray(rho0, float)
    z0 = np.concatenate([rho0, np.zeros(d), F1(rho0)])
    layout = {"rho": slice(0, d), "J": slice(d, 2 * d), "w": slice(2 * d, 3 * d),
              "p": slice(3 * d, 4 * d), "q": slice(4 * d, 5 * d)}
    eq = lambda z: np.concatenate([-z[d:2 * d] - Dg @ z[:d], F1(z[:d]) - z[2 * d:]])
    return ModelInstance("goldstein-taylor-3", sys, layout, eq, z0, {"F1": F1},
                         {"H": Hf, "G": Gf, "K": Kf},
                         {"d": d, "dx": dx, "a": a, "b": b, "gradient": gradient})


def shallow_water(d: int = 16, dx: Optional[float] = None, H=None, G=None,
                  epsilon: float = 1e-2, gradient: str = "forward", h0=None) -> ModelInstance:
    """Shallow-water relaxation; slow ``(h, f)``, fast ``g``. Reduces to inviscid Burgers."""
    dx = _check_params(d, dx)
    D, Dg = _ops(d, dx, gradient)
    Hf, p = _gain(H, d, _profile(0.5, 0.0, d), "H")
    Gf, q = _gain(G, d, _profile(0.1, 0.5, d), "G")
    I, Z = np.eye(d), np.zeros((d, d))
    m = 2 * d
    sys = TwoScaleSystem(
        A1=MatrixField.constant(_stack(-D, Z), "A1"),
        A2=MatrixField.constant(-I, "A2"),
        B1=MatrixField((m, p), lambda z: _stack(Hf(z[:d]), np.zeros((d, p))), "B1"),
        B2=MatrixField((d, q), lambda z: Gf(z[:d]), "B2"),
        C1=MatrixField((m,), lambda z: np.concatenate(
            [-D @ z[d:], -Dg @ (z[:d] + 0.5 * z[:d] ** 2)]), "C1"),
        C2=MatrixField((d,), lambda z: 0.5 * z[:d] ** 2 - z[d:], "C2"),
        omega_A=_box(p), omega_B=_box(q), epsilon=float(epsilon))
    h0 = 0.5 + 0.1 * np.sin(2 * np.pi * _grid(d)) if h0 is None else np.asarray(h0, float)
    z0 = np.concatenate([h0, np.zeros(d)])
    layout = {"h": slice(0, d), "f": slice(d, 2 * d), "g": slice(2 * d, 3 * d)}
    return ModelInstance("shallow-water-2", sys, layout, lambda z: 0.5 * z[:d] ** 2 - z[d:], z0,
                         {"F": lambda h: 0.5 * h * h}, {"H": Hf, "G": Gf},
                         {"d": d, "dx": dx, "gradient": gradient})


def shallow_water_three_scale(d: int = 16, dx: Optional[float] = None, flux1=None, H=None,
                              G=None, K=None, epsilon: float = 1e-2, gradient: str = "forward",
                              h0=None) -> ModelInstance:
    """Three-scale shallow water; slow ``(h, f, k)``, meso ``(g, p)``, micro ``q``.

    The micro bracket is ``q - F1(h) - K gamma``.
    """
    dx = _check_params(d, dx)
    F1 = flux1 or (lambda h: 0.1 * h)
    D, Dg = _ops(d, dx, gradient)
    Hf, pa = _gain(H, d, _profile(0.5, 0.0, d), "H")
    Gf, qb = _gain(G, d, _profile(0.1, 0.5, d), "G")
    Kf, rg = _gain(K, d, _profile(0.1, 1.0, d), "K")
    I, Z = np.eye(d), np.zeros((d, d))
    m, n = 3 * d, 2 * d
    sys = ThreeScaleSystem(
        A0=MatrixField.constant(_stack(Z, Z, I), "A0"),
        A1=MatrixField.constant(np.block([[Z, -D], [Z, Z], [Z, Z]]), "A1"),
        A2=MatrixField.constant(np.block([[-I, Z], [I, -I]]), "A2"),
        A3=MatrixField.constant(-I, "A3"),
        B1=MatrixField((m, pa), lambda z: _stack(Hf(z[:d]), np.zeros((2 * d, pa))), "B1"),
        B2=MatrixField((n, qb), lambda z: _stack(Gf(z[:d]), np.zeros((d, qb))), "B2"),
        B3=MatrixField((d, rg), lambda z: Kf(z[:d]), "B3"),
        C1=MatrixField((m,), lambda z: np.concatenate(
            [-D @ z[2 * d:], -Dg @ (z[:d] + 0.5 * z[:d] ** 2), np.zeros(d)]), "C1"),
        C2=MatrixField((n,), lambda z: np.concatenate(
            [0.5 * z[:d] ** 2 - z[d:2 * d], z[d:2 * d] - z[2 * d:]]), "C2"),
        C3=MatrixField((d,), lambda z: F1(z[:d]), "C3"),
        omega_A=_box(pa), omega_B=_box(qb), omega_G=_box(rg), epsilon=float(epsilon))
    h0 = 0.5 + 0.1 * np.sin(2 * np.pi * _grid(d)) if h0 is None else np.asarray(h0, float)
    z0 = np.concatenate([h0, np.zeros(d), np.zeros(d)])

    def eq(z):
        h, f, k = z[:d], z[d:2 * d], z[2 * d:]
        g = 0.5 * h ** 2 - f
        return np.concatenate([g, f + g - k, F1(h)])

    layout = {"h": slice(0, d), "f": slice(d, 2 * d), "k": slice(2 * d, 3 * d),
              "g": slice(3 * d, 4 * d), "p": slice(4 * d, 5 * d), "q": slice(5 * d, 6 * d)}
    return ModelInstance("shallow-water-3", sys, layout, eq, z0, {"F1": F1},
                         {"H": Hf, "G": Gf, "K": Kf}, {"d": d, "dx": dx, "gradient": gradient})


def _floor_check(rho, floor, label="density"):
    if np.min(rho) < floor:
        raise DensityFloor(f"{label} {np.min(rho):.3e} below floor {floor:.1e}")


def traffic_model(d: int = 16, dx: Optional[float] = None, A: float = 1.0, V=None, P=None,
                  H=None, G=None, epsilon: float = 1e-2, floor: float = 1e-8,
                  rho0=None, g0=None) -> ModelInstance:
    """Second-order traffic flow; slow ``(rho, g)``, fast ``f``.

    The velocity is recovered from ``rho v = f + g - rho P(rho)``. The
    ``rho`` equation is affine in ``f``; the ``g`` equation is quadratic in
    ``f`` and is carried as a non-affine slow term.
    """
    dx = _check_params(d, dx)
    if not A > 0:
        raise ValueError("A must be positive")
    V = V or (lambda r: 1.0 - r)
    P = P or (lambda r: 2.0 * r)
    D = make_upwind(d, dx, "backward").matrix
    Hf, p = _gain(H, d, _profile(0.1, 0.0, d), "H")
    Gf, q = _gain(G, d, _profile(0.02, 0.5, d), "G")
    I, Z = np.eye(d), np.zeros((d, d))
    m = 2 * d

    def rho_of(z):
        r = z[:d]
        _floor_check(r, floor)
        return r

    def a1(z):
        r = rho_of(z)
        top = -np.diag((D @ r) / r) - r[:, None] * D / r[None, :]
        return _stack(top, Z)

    def c1(z):
        r, g = rho_of(z), z[d:]
        vc = (g - r * P(r)) / r
        return np.concatenate([-vc * (D @ r) - r * (D @ vc), np.zeros(d)])

    def extra(z, y):
        r, g = rho_of(z), z[d:]
        s = y + g
        v = (s - r * P(r)) / r
        return np.concatenate([np.zeros(d), -s * (D @ v) - v * (D @ s)])

    sys = TwoScaleSystem(
        A1=MatrixField((m, d), a1, "A1"),
        A2=MatrixField.constant(-A * I, "A2"),
        B1=MatrixField((m, p), lambda z: _stack(Hf(z[:d]), np.zeros((d, p))), "B1"),
        B2=MatrixField((d, q), lambda z: A * Gf(z[:d]), "B2"),
        C1=MatrixField((m,), c1, "C1"),
        C2=MatrixField((d,), lambda z: A * (rho_of(z) * (V(z[:d]) + P(z[:d])) - z[d:]), "C2"),
        omega_A=_box(p), omega_B=_box(q), epsilon=float(epsilon), slow_extra=extra)
    rho0 = 0.2 + 0.05 * np.sin(2 * np.pi * _grid(d)) if rho0 is None else np.asarray(rho0, float)
    g0 = np.zeros(d) if g0 is None else np.asarray(g0, float)
    z0 = np.concatenate([rho0, g0])

    def velocity(state):
        r, g, f = state[:d], state[d:2 * d], state[2 * d:3 * d]
        _floor_check(r, floor)
        return (f + g - r * P(r)) / r

    layout = {"rho": slice(0, d), "g": slice(d, 2 * d), "f": slice(2 * d, 3 * d)}
    eq = lambda z: rho_of(z) * (V(z[:d]) + P(z[:d])) - z[d:]
    return ModelInstance("traffic", sys, layout, eq, z0, {"V": V, "P": P, "velocity": velocity},
                         {"H": Hf, "G": Gf}, {"d": d, "dx": dx, "A": A, "floor": floor})


def granular_model(d: int = 16, dx: Optional[float] = None, e: float = 0.5, grav: float = 0.0,
                   G=None, temperature="constant", T0: float = 0.1, Hgain=None, Ggain=None,
                   Kgain=None, epsilon: float = 1e-2, floor: float = 1e-8,
                   rho0=None, u0=None) -> ModelInstance:
    """Granular gas; slow ``(rho, v, w)``, fast ``phi``.

    ``temperature`` is ``"constant"`` (``T = T0``), ``"energy"`` (``rho T =
    2/3 w - 1/3 v u``, read from the slow state) or a callable of the slow
    state. The slow control is ``(alpha, gamma)`` stacked on one box, with
    ``alpha`` driving ``rho`` and ``gamma`` driving ``v``.
    """
    dx = _check_params(d, dx)
    if not 0 <= e <= 1:
        raise ValueError("restitution coefficient must lie in [0, 1]")
    Gcorr = G or (lambda r: 1.0 + r)
    D = make_upwind(d, dx, "backward").matrix
    Hf, pa = _gain(Hgain, d, _profile(0.1, 0.0, d), "H")
    Gf, qb = _gain(Ggain, d, _profile(0.1, 0.5, d), "G")
    Kf, rg = _gain(Kgain, d, _profile(0.1, 1.0, d), "K")
    m = 3 * d

    def parts(z):
        r, v, w = z[:d], z[d:2 * d], z[2 * d:]
        _floor_check(r, floor)
        u = v / r
        if callable(temperature):
            T = np.asarray(temperature(z), dtype=float) * np.ones(d)
        elif temperature == "constant":
            T = np.full(d, float(T0))
        elif temperature == "energy":
            T = ((2.0 / 3.0) * w - (1.0 / 3.0) * v * u) / r
        else:
            raise ValueError(f"unknown temperature closure {temperature!r}")
        if np.any(T < 0):
            raise NegativeTemperature(f"temperature {np.min(T):.3e} is negative")
        return r, v, w, u, T

    def pressure(r, T):
        return r * T * (1.0 + 2.0 * (1.0 + e) * Gcorr(r))

    def rate(z):
        r, _, _, _, T = parts(z)
        return (2.0 * (1.0 - e * e) / 3.0) * Gcorr(r) * r * np.sqrt(T)

    def a1(z):
        _, _, _, u, _ = parts(z)
        Z = np.zeros((d, d))
        return _stack(Z, Z, -u[:, None] * D - np.diag(D @ u))

    def c1(z):
        r, v, w, u, T = parts(z)
        pr = pressure(r, T)
        s = w + pr
        return np.concatenate([-D @ v,
                               r * grav - u * (D @ v) - v * (D @ u) - D @ pr,
                               -u * (D @ s) - s * (D @ u)])

    def b1(z):
        r = z[:d]
        out = np.zeros((m, pa + rg))
        out[:d, :pa] = Hf(r)
        out[d:2 * d, pa:] = Kf(r)
        return out

    sys = TwoScaleSystem(
        A1=MatrixField((m, d), a1, "A1"),
        A2=MatrixField((d, d), lambda z: -np.diag(rate(z)), "A2"),
        B1=MatrixField((m, pa + rg), b1, "B1"),
        B2=MatrixField((d, qb), lambda z: rate(z)[:, None] * Gf(z[:d]), "B2"),
        C1=MatrixField((m,), c1, "C1"),
        C2=MatrixField((d,), lambda z: rate(z) * (0.5 * parts(z)[3] * z[d:2 * d] - z[2 * d:]), "C2"),
        omega_A=_box(pa + rg), omega_B=_box(qb), epsilon=float(epsilon))
    x = _grid(d)
    rho0 = 1.0 + 0.1 * np.sin(2 * np.pi * x) if rho0 is None else np.asarray(rho0, float)
    u0 = np.full(d, 2.0) if u0 is None else np.asarray(u0, float)
    v0 = rho0 * u0
    w0 = 0.5 * rho0 * u0 ** 2 + 1.5 * rho0 * T0
    z0 = np.concatenate([rho0, v0, w0])

    def eq(z):
        _, v, w, u, _ = parts(z)
        return 0.5 * u * v - w

    layout = {"rho": slice(0, d), "v": slice(d, 2 * d), "w": slice(2 * d, 3 * d),
              "phi": slice(3 * d, 4 * d)}
    return ModelInstance("granular", sys, layout, eq, z0, {"G": Gcorr, "M": rate},
                         {"H": Hf, "G": Gf, "K": Kf},
                         {"d": d, "dx": dx, "e": e, "grav": grav, "T0": T0,
                          "temperature": temperature, "floor": floor})


def affine_two_scale(a1: float = 1.0, a2: float = -1.0, b1: float = 0.5, b2: float = 1.0,
                     c1: float = 0.0, c2: float = 0.0, epsilon: float = 1e-2) -> ModelInstance:
    """Scalar constant-coefficient instance (one slow, one fast variable)."""
    sys = TwoScaleSystem(
        A1=MatrixField.constant([[a1]], "A1"), A2=MatrixField.constant([[a2]], "A2"),
        B1=MatrixField.constant([[b1]], "B1"), B2=MatrixField.constant([[b2]], "B2"),
        C1=MatrixField.vector([c1], "C1"), C2=MatrixField.vector([c2], "C2"),
        omega_A=_box(1), omega_B=_box(1), epsilon=float(epsilon))
    return ModelInstance("affine-2", sys, {"z": slice(0, 1), "y": slice(1, 2)},
                         lambda z: np.array([-(c2) / a2]), np.zeros(1), {}, {},
                         {"a1": a1, "a2": a2, "b1": b1, "b2": b2, "c1": c1, "c2": c2})


def affine_three_scale(a0: float = 1.0, a1: float = 1.0, a2: float = -1.0, a3: float = -1.0,
                       b1: float = 0.5, b2: float = 1.0, b3: float = 1.0, c1: float = 0.0,
                       c2: float = 0.0, c3: float = 0.0, epsilon: float = 1e-2) -> ModelInstance:
    """Scalar constant-coefficient instance with one variable per scale."""
    sys = ThreeScaleSystem(
        A0=MatrixField.constant([[a0]], "A0"), A1=MatrixField.constant([[a1]], "A1"),
        A2=MatrixField.constant([[a2]], "A2"), A3=MatrixField.constant([[a3]], "A3"),
        B1=MatrixField.constant([[b1]], "B1"), B2=MatrixField.constant([[b2]], "B2"),
        B3=MatrixField.constant([[b3]], "B3"),
        C1=MatrixField.vector([c1], "C1"), C2=MatrixField.vector([c2], "C2"),
        C3=MatrixField.vector([c3], "C3"),
        omega_A=_box(1), omega_B=_box(1), omega_G=_box(1), epsilon=float(epsilon))
    return ModelInstance("affine-3", sys, {"z": slice(0, 1), "y": slice(1, 2), "x": slice(2, 3)},
                         lambda z: np.array([-c2 / a2, -c3 / a3]), np.zeros(1), {}, {},
                         {"a0": a0, "a1": a1, "a2": a2, "a3": a3})


REGISTRY: Dict[str, Callable[..., ModelInstance]] = {
    "jin-xin-2": jin_xin_two_scale,
    "jin-xin-3": jin_xin_three_scale,
    "goldstein-taylor-2": goldstein_taylor_two_scale,
    "goldstein-taylor-3": goldstein_taylor_three_scale,
    "shallow-water-2": shallow_water,
    "shallow-water-3": shallow_water_three_scale,
    "traffic": traffic_model,
    "granular": granular_model,
    "affine-2": affine_two_scale,
    "affine-3": affine_three_scale,
}

#: Models built from semi-discretized PDEs (the synthetic affine ones excluded).
ZOO = tuple(k for k in REGISTRY if not k.startswith("affine"))


def get_model(name: str, **params) -> ModelInstance:
    try:
        builder = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {', '.join(REGISTRY)}") from None
    return builder(**params)


def list_models():
    return list(REGISTRY)


def local_equilibrium_residual(model: ModelInstance, state, beta, gamma=None,
                               block: str = "all") -> float:
    """Max-norm of the fast bracket (``eps`` times the fast velocity).

    For three-scale models ``block`` selects ``"meso"``, ``"micro"`` or the
    larger of the two (``"all"``); ``gamma`` defaults to the box centre.
    """
    parts = model.split(state)
    sys = model.system
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if model.three_scale:
        z, y, x = parts
        gamma = sys.omega_G.center if gamma is None else np.atleast_1d(gamma)
        meso = np.max(np.abs(sys.meso_bracket(z, y, beta)))
        micro = np.max(np.abs(sys.micro_bracket(z, x, gamma)))
        return float({"meso": meso, "micro": micro, "all": max(meso, micro)}[block])
    z, y = parts
    return float(np.max(np.abs(sys.fast_bracket(z, y, beta))))
