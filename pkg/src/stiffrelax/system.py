"""Affine singularly perturbed control systems.

Two-scale systems have the form

    dz/ds       = A1(z) y + B1(z) alpha + C1(z)
    eps * dy/ds = A2(z) y + B2(z) beta  + C2(z)

and three-scale systems add a micro variable ``x`` with ``eps**2 * dx/ds =
A3 x + B3 gamma + C3`` that enters the slow drift through ``A0(z) x``.
Control sets are axis-aligned boxes, so every supremum appearing in the
Hamiltonians is available in closed form.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, EigenFailure, NonFiniteMatrix


@dataclass(frozen=True)
class ControlBox:
    """Axis-aligned box ``[lower, upper]`` of admissible control values."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise DimensionMismatch(f"box bounds have shapes {lo.shape} and {hi.shape}")
        if lo.size == 0:
            raise DimensionMismatch("control box must have dimension >= 1")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("control box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("control box requires lower <= upper")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, half_width: float = 1.0, dim: int = 1) -> "ControlBox":
        return cls(-half_width * np.ones(dim), half_width * np.ones(dim))

    @classmethod
    def point(cls, value) -> "ControlBox":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(v, v)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def contains(self, u, tol: float = 0.0) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))

    def vertices(self) -> np.ndarray:
        """All ``2**dim`` vertices, with degenerate axes collapsed."""
        axes = [np.unique([lo, hi]) for lo, hi in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def candidates(self) -> np.ndarray:
        """Vertices plus the center; the control search set of the grid solvers."""
        verts = self.vertices()
        c = self.center[None, :]
        if np.any(np.all(np.isclose(verts, c), axis=1)):
            return verts
        return np.vstack([verts, c])

    def product(self, other: "ControlBox") -> "ControlBox":
        return ControlBox(np.concatenate([self.lower, other.lower]),
                          np.concatenate([self.upper, other.upper]))


@dataclass(frozen=True)
class MatrixField:
    """A matrix- or vector-valued function of the slow state with a fixed shape."""

    shape: tuple
    fn: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    def __call__(self, z) -> np.ndarray:
        out = np.asarray(self.fn(np.asarray(z, dtype=float)), dtype=float)
        if out.shape != self.shape:
            if out.size == int(np.prod(self.shape)) and out.ndim <= 1 and len(self.shape) == 1:
                out = out.reshape(self.shape)
            else:
                raise DimensionMismatch(
                    f"field {self.name or '?'} returned shape {out.shape}, expected {self.shape}")
        if not np.all(np.isfinite(out)):
            raise NonFiniteMatrix(f"field {self.name or '?'} returned non-finite entries")
        return out

    @classmethod
    def constant(cls, value, name: str = "") -> "MatrixField":
        arr = np.array(value, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        arr.setflags(write=False)
        return cls(arr.shape, lambda z: arr, name)

    @classmethod
    def zeros(cls, shape, name: str = "") -> "MatrixField":
        return cls.constant(np.zeros(shape), name)

    @classmethod
    def vector(cls, value, name: str = "") -> "MatrixField":
        arr = np.atleast_1d(np.array(value, dtype=float))
        arr.setflags(write=False)
        return cls(arr.shape, lambda z: arr, name)


def _as_field(obj, shape=None, name="") -> MatrixField:
    if isinstance(obj, MatrixField):
        return obj
    if callable(obj):
        if shape is None:
            raise ValueError(f"callable field {name} needs an explicit shape")
        return MatrixField(shape, obj, name)
    arr = np.asarray(obj, dtype=float)
    if shape is not None and len(shape) == 1:
        return MatrixField.vector(arr.reshape(shape), name)
    return MatrixField.constant(arr, name)


@dataclass(frozen=True)
class TwoScaleSystem:
    """Controlled slow/fast system with affine control inputs.

    ``slow_extra``, when given, is an additional term ``N(z, y)`` in the slow
    drift. It exists for models whose slow equation is not affine in the fast
    state (the traffic model); closed-form ergodic constants are unavailable
    for such systems.
    """

    A1: MatrixField
    A2: MatrixField
    B1: MatrixField
    B2: MatrixField
    C1: MatrixField
    C2: MatrixField
    omega_A: ControlBox
    omega_B: ControlBox
    epsilon: float
    slow_extra: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        m, n = self.C1.shape[0], self.C2.shape[0]
        p, q = self.omega_A.dim, self.omega_B.dim
        expected = {
            "A1": (m, n), "A2": (n, n), "B1": (m, p), "B2": (n, q),
            "C1": (m,), "C2": (n,),
        }
        for key, shape in expected.items():
            got = getattr(self, key).shape
            if tuple(got) != shape:
                raise DimensionMismatch(f"{key} has shape {got}, expected {shape}")

    m = property(lambda self: self.C1.shape[0])
    n = property(lambda self: self.C2.shape[0])
    p = property(lambda self: self.omega_A.dim)
    q = property(lambda self: self.omega_B.dim)

    @property
    def is_affine(self) -> bool:
        return self.slow_extra is None

    def with_epsilon(self, epsilon: float) -> "TwoScaleSystem":
        return dataclasses.replace(self, epsilon=float(epsilon))

    def slow_drift(self, z, y, alpha) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        y = np.asarray(y, dtype=float)
        out = self.A1(z) @ y + self.B1(z) @ np.atleast_1d(alpha) + self.C1(z)
        if self.slow_extra is not None:
            out = out + np.asarray(self.slow_extra(z, y), dtype=float)
        return out

    def fast_bracket(self, z, y, beta) -> np.ndarray:
        """``A2 y + B2 beta + C2``, i.e. ``eps * dy/ds``."""
        z = np.asarray(z, dtype=float)
        return self.A2(z) @ np.asarray(y, dtype=float) + self.B2(z) @ np.atleast_1d(beta) + self.C2(z)


@dataclass(frozen=True)
class ThreeScaleSystem:
    """Macro/meso/micro system; the micro block evolves on time scale ``eps**2``."""

    A0: MatrixField
    A1: MatrixField
    A2: MatrixField
    A3: MatrixField
    B1: MatrixField
    B2: MatrixField
    B3: MatrixField
    C1: MatrixField
    C2: MatrixField
    C3: MatrixField
    omega_A: ControlBox
    omega_B: ControlBox
    omega_G: ControlBox
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        m, n, l = self.C1.shape[0], self.C2.shape[0], self.C3.shape[0]
        p, q, r = self.omega_A.dim, self.omega_B.dim, self.omega_G.dim
        expected = {
            "A0": (m, l), "A1": (m, n), "A2": (n, n), "A3": (l, l),
            "B1": (m, p), "B2": (n, q), "B3": (l, r),
            "C1": (m,), "C2": (n,), "C3": (l,),
        }
        for key, shape in expected.items():
            got = getattr(self, key).shape
            if tuple(got) != shape:
                raise DimensionMismatch(f"{key} has shape {got}, expected {shape}")

    m = property(lambda self: self.C1.shape[0])
    n = property(lambda self: self.C2.shape[0])
    l = property(lambda self: self.C3.shape[0])
    p = property(lambda self: self.omega_A.dim)
    q = property(lambda self: self.omega_B.dim)
    r = property(lambda self: self.omega_G.dim)

    @property
    def micro_epsilon(self) -> float:
        return self.epsilon ** 2

    def with_epsilon(self, epsilon: float) -> "ThreeScaleSystem":
        return dataclasses.replace(self, epsilon=float(epsilon))

    def embedded_two_scale(self) -> TwoScaleSystem:
        """The (z, y) system obtained by deleting the micro block."""
        return TwoScaleSystem(self.A1, self.A2, self.B1, self.B2, self.C1, self.C2,
                              self.omega_A, self.omega_B, self.epsilon)

    def slow_drift(self, z, y, x, alpha) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return (self.A0(z) @ np.asarray(x, dtype=float) + self.A1(z) @ np.asarray(y, dtype=float)
                + self.B1(z) @ np.atleast_1d(alpha) + self.C1(z))

    def meso_bracket(self, z, y, beta) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.A2(z) @ np.asarray(y, dtype=float) + self.B2(z) @ np.atleast_1d(beta) + self.C2(z)

    def micro_bracket(self, z, x, gamma) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.A3(z) @ np.asarray(x, dtype=float) + self.B3(z) @ np.atleast_1d(gamma) + self.C3(z)


def two_scale(A1, A2, B1, B2, C1, C2, omega_A, omega_B, epsilon, slow_extra=None) -> TwoScaleSystem:
    """Build a :class:`TwoScaleSystem` from arrays, scalars or fields.

    Arrays become constant fields; scalars are read as 1x1 matrices (or
    length-1 vectors for ``C1``/``C2``).
    """
    c1 = _as_field(C1, None if isinstance(C1, MatrixField) or callable(C1) else np.atleast_1d(C1).shape, "C1")
    c2 = _as_field(C2, None if isinstance(C2, MatrixField) or callable(C2) else np.atleast_1d(C2).shape, "C2")
    return TwoScaleSystem(
        _as_field(A1, name="A1"), _as_field(A2, name="A2"),
        _as_field(B1, name="B1"), _as_field(B2, name="B2"),
        c1, c2, omega_A, omega_B, float(epsilon), slow_extra)


@dataclass(frozen=True)
class CostSpec:
    """Running cost, terminal cost and horizon of a finite-horizon problem."""

    running: Callable[[np.ndarray], float]
    terminal: Callable[[np.ndarray], float]
    horizon: float

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")


@dataclass(frozen=True)
class StabilityReport:
    margin: float
    max_real_parts: np.ndarray
    samples: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all(self.max_real_parts <= -self.margin))

    @property
    def worst(self) -> float:
        return float(np.max(self.max_real_parts))


def validate_stability(sys, samples: Sequence, margin: float, block: str = "A2") -> StabilityReport:
    """Check that the fast matrix is Hurwitz with a margin at every sample.

    ``block`` selects the matrix field; use ``"A3"`` for the micro block of a
    three-scale system.
    """
    samples = [np.asarray(z, dtype=float) for z in samples]
    if not samples:
        raise ValueError("need at least one sample state")
    if not margin > 0:
        raise ValueError("margin must be positive")
    field = getattr(sys, block)
    worst = np.empty(len(samples))
    for i, z in enumerate(samples):
        raw = np.asarray(field.fn(z), dtype=float)
        if not np.all(np.isfinite(raw)):
            raise NonFiniteMatrix(f"{block}(z) has non-finite entries at sample {i}")
        try:
            eig = np.linalg.eigvals(field(z))
        except np.linalg.LinAlgError as exc:
            raise EigenFailure(f"eigenvalues of {block} did not converge at sample {i}") from exc
        worst[i] = np.max(eig.real)
    return StabilityReport(float(margin), worst, np.array(samples))


def validate_controllability(sys, z) -> float:
    """Certified radius of a ball inside ``{B2(z) beta : beta in omega_B}``.

    The ball is centred at the image of the box centre. Returns 0 when
    ``B2(z)`` is rank deficient.
    """
    B2 = np.asarray(sys.B2.fn(np.asarray(z, dtype=float)), dtype=float)
    n, q = sys.n, sys.omega_B.dim
    if B2.shape != (n, q):
        raise DimensionMismatch(f"B2(z) has shape {B2.shape}, expected {(n, q)}")
    if not np.all(np.isfinite(B2)):
        raise NonFiniteMatrix("B2(z) has non-finite entries")
    if np.linalg.matrix_rank(B2) < n:
        return 0.0
    sigma_min = np.linalg.svd(B2, compute_uv=False)[n - 1]
    return float(sigma_min * np.min(sys.omega_B.half_width))


def box_sup(c, box: ControlBox):
    """Maximise ``-c . u`` over the box.

    Returns ``(value, argmax)``. Coordinates with ``c[i] == 0`` take the
    interval midpoint.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.shape != (box.dim,):
        raise DimensionMismatch(f"coefficient has shape {c.shape}, box has dimension {box.dim}")
    arg = np.where(c > 0, box.lower, np.where(c < 0, box.upper, box.center))
    value = float(np.sum(np.maximum(-c * box.lower, -c * box.upper)))
    return value, arg


def hamiltonian_full(sys: TwoScaleSystem, z, y, p, q) -> float:
    """Two-scale Hamiltonian ``sup_{a,b} { -p.f_slow - q.f_fast }`` at fixed ``z, y``."""
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if p.shape != (sys.m,) or q.shape != (sys.n,):
        raise DimensionMismatch("costate shapes do not match the system")
    slow = sys.A1(z) @ y + sys.C1(z)
    if sys.slow_extra is not None:
        slow = slow + sys.slow_extra(z, y)
    fast = sys.A2(z) @ y + sys.C2(z)
    return (-slow @ p + box_sup(sys.B1(z).T @ p, sys.omega_A)[0]
            - fast @ q + box_sup(sys.B2(z).T @ q, sys.omega_B)[0])


def hamiltonian_three_scale(sys: ThreeScaleSystem, z, y, x, p, q, r) -> float:
    """Three-scale Hamiltonian as the sum of macro, meso and micro contributions."""
    z = np.asarray(z, dtype=float)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if p.shape != (sys.m,) or q.shape != (sys.n,) or r.shape != (sys.l,):
        raise DimensionMismatch("costate shapes do not match the system")
    h1 = -(sys.A0(z) @ x + sys.A1(z) @ y + sys.C1(z)) @ p + box_sup(sys.B1(z).T @ p, sys.omega_A)[0]
    h2 = -(sys.A2(z) @ y + sys.C2(z)) @ q + box_sup(sys.B2(z).T @ q, sys.omega_B)[0]
    h3 = -(sys.A3(z) @ x + sys.C3(z)) @ r + box_sup(sys.B3(z).T @ r, sys.omega_G)[0]
    return float(h1 + h2 + h3)
