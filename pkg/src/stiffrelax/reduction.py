"""Elimination of the fast variables and the closed-form ergodic constants.

In the affine setting the static equation ``0 = A2 y + B2 beta + C2`` has the
unique root ``psi(z, beta) = -A2^{-1} (B2 beta + C2)``. Substituting it into
the slow drift gives the reduced dynamics, and the supremum over ``beta`` of
``-p . A1 psi`` is the ergodic constant of the cell problem.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from .errors import DimensionMismatch, NotAffine, SingularFastMatrix
from .system import ControlBox, MatrixField, ThreeScaleSystem, TwoScaleSystem, box_sup

#: Condition number above which a fast matrix is declared singular.
COND_LIMIT = 1e12


def _checked_solve(A: np.ndarray, rhs: np.ndarray, label: str) -> np.ndarray:
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularFastMatrix(f"{label} is singular to working precision (cond={cond:.3g})")
    return np.linalg.solve(A, rhs)


def _static(A: np.ndarray, B: np.ndarray, C: np.ndarray, control, label: str) -> np.ndarray:
    control = np.atleast_1d(np.asarray(control, dtype=float))
    if control.shape != (B.shape[1],):
        raise DimensionMismatch(f"control has shape {control.shape}, expected {(B.shape[1],)}")
    return -_checked_solve(A, B @ control + C, label)


def solve_static(sys: TwoScaleSystem, z, beta) -> np.ndarray:
    """Root ``psi`` of the static equation ``A2 psi + B2 beta + C2 = 0``."""
    z = np.asarray(z, dtype=float)
    return _static(sys.A2(z), sys.B2(z), sys.C2(z), beta, "A2(z)")


def solve_micro_static(sys3: ThreeScaleSystem, z, gamma) -> np.ndarray:
    """Root of the micro static equation ``A3 x + B3 gamma + C3 = 0``."""
    z = np.asarray(z, dtype=float)
    return _static(sys3.A3(z), sys3.B3(z), sys3.C3(z), gamma, "A3(z)")


def static_residual(sys: TwoScaleSystem, z, beta, psi) -> float:
    z = np.asarray(z, dtype=float)
    r = sys.A2(z) @ psi + sys.B2(z) @ np.atleast_1d(beta) + sys.C2(z)
    return float(np.max(np.abs(r)))


@dataclass(frozen=True)
class ReducedSystem:
    """Slow dynamics with the fast state slaved to its equilibrium.

    ``rhs(z, *controls)`` takes one control vector per entry of ``boxes``:
    ``(alpha, beta)`` for a two-scale source and ``(alpha, beta, gamma)`` for
    the macro level of a three-scale cascade.
    """

    m: int
    rhs: Callable[..., np.ndarray]
    boxes: Tuple[ControlBox, ...]
    source: object = None

    @property
    def omega_A(self) -> ControlBox:
        return self.boxes[0]

    @property
    def omega_B(self) -> ControlBox:
        return self.boxes[1]

    @property
    def p(self) -> int:
        return self.boxes[0].dim

    @property
    def q(self) -> int:
        return self.boxes[1].dim

    def __call__(self, z, *controls) -> np.ndarray:
        if len(controls) != len(self.boxes):
            raise DimensionMismatch(f"expected {len(self.boxes)} controls, got {len(controls)}")
        return self.rhs(np.asarray(z, dtype=float), *controls)


def build_reduced(sys: TwoScaleSystem) -> ReducedSystem:
    """Reduced dynamics ``dz/ds = A1 psi(z, beta) + B1 alpha + C1``."""

    def rhs(z, alpha, beta):
        z = np.asarray(z, dtype=float)
        return sys.slow_drift(z, solve_static(sys, z, beta), alpha)

    return ReducedSystem(sys.m, rhs, (sys.omega_A, sys.omega_B), sys)


def lambda1_closed_form(sys: TwoScaleSystem, z, p) -> float:
    """Ergodic constant ``sup_beta -p . A1(z) psi(z, beta)`` of the cell problem."""
    if not sys.is_affine:
        raise NotAffine("closed-form ergodic constant needs a slow drift affine in the fast state")
    z = np.asarray(z, dtype=float)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.shape != (sys.m,):
        raise DimensionMismatch(f"costate has shape {p.shape}, expected {(sys.m,)}")
    A1, A2, B2, C2 = sys.A1(z), sys.A2(z), sys.B2(z), sys.C2(z)
    psi0 = -_checked_solve(A2, C2, "A2(z)")
    gain = -_checked_solve(A2, B2, "A2(z)")  # d psi / d beta
    coeff = gain.T @ (A1.T @ p)
    return float(-p @ (A1 @ psi0) + box_sup(coeff, sys.omega_B)[0])


def effective_hamiltonian(sys: TwoScaleSystem, z, p) -> float:
    """``-p . C1 + sup_alpha(-p . B1 alpha) + lambda1``."""
    z = np.asarray(z, dtype=float)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    return float(-p @ sys.C1(z) + box_sup(sys.B1(z).T @ p, sys.omega_A)[0]
                 + lambda1_closed_form(sys, z, p))


def lambda2_closed_form(sys3: ThreeScaleSystem, z, p) -> float:
    """Micro ergodic constant ``sup_gamma -p . A0(z) psi_micro(z, gamma)``."""
    z = np.asarray(z, dtype=float)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.shape != (sys3.m,):
        raise DimensionMismatch(f"costate has shape {p.shape}, expected {(sys3.m,)}")
    A0, A3, B3, C3 = sys3.A0(z), sys3.A3(z), sys3.B3(z), sys3.C3(z)
    x0 = -_checked_solve(A3, C3, "A3(z)")
    gain = -_checked_solve(A3, B3, "A3(z)")
    coeff = gain.T @ (A0.T @ p)
    return float(-p @ (A0 @ x0) + box_sup(coeff, sys3.omega_G)[0])


def multiscale_effective_hamiltonian(sys3: ThreeScaleSystem, z, p) -> float:
    """Macro Hamiltonian ``-p . C1 + sup_alpha + lambda1 + lambda2``."""
    two = sys3.embedded_two_scale()
    return effective_hamiltonian(two, z, p) + lambda2_closed_form(sys3, z, p)


def cascade_reduce(sys3: ThreeScaleSystem) -> Tuple[TwoScaleSystem, ReducedSystem]:
    """Eliminate the micro scale, then the meso scale.

    The meso system keeps ``(z, y)`` with the micro equilibrium folded into
    the slow drift: its slow control is ``(alpha, gamma)`` on the product box.
    The returned macro system takes controls ``(alpha, beta, gamma)``.
    """
    m, p, r = sys3.m, sys3.p, sys3.r

    def b1(z):
        A0, A3, B3 = sys3.A0(z), sys3.A3(z), sys3.B3(z)
        return np.hstack([sys3.B1(z), A0 @ -_checked_solve(A3, B3, "A3(z)")])

    def c1(z):
        A0, A3, C3 = sys3.A0(z), sys3.A3(z), sys3.C3(z)
        return sys3.C1(z) + A0 @ -_checked_solve(A3, C3, "A3(z)")

    meso = TwoScaleSystem(
        A1=sys3.A1, A2=sys3.A2,
        B1=MatrixField((m, p + r), b1, "B1 meso"),
        B2=sys3.B2,
        C1=MatrixField((m,), c1, "C1 meso"),
        C2=sys3.C2,
        omega_A=sys3.omega_A.product(sys3.omega_G),
        omega_B=sys3.omega_B,
        epsilon=sys3.epsilon,
    )
    inner = build_reduced(meso)

    def rhs(z, alpha, beta, gamma):
        ag = np.concatenate([np.atleast_1d(alpha), np.atleast_1d(gamma)])
        return inner.rhs(z, ag, beta)

    macro = ReducedSystem(m, rhs, (sys3.omega_A, sys3.omega_B, sys3.omega_G), sys3)
    return meso, macro
