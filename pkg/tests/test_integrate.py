import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from stiffrelax import (ControlBox, ControlSignal, MatrixField, ThreeScaleSystem, TwoScaleSystem,
                        build_reduced, get_model, integrate_reduced, integrate_stiff,
                        integrate_three_scale, trajectory_error)
from stiffrelax.errors import (BoundsExceededWarning, DimensionMismatch, GridMismatch,
                               NonFiniteState)
from stiffrelax.integrate import Trajectory
from stiffrelax.models import local_equilibrium_residual
from stiffrelax.reduction import ReducedSystem

c, v = MatrixField.constant, MatrixField.vector
BOX = ControlBox.symmetric()


def scalar(a1=0.0, a2=-1.0, b1=0.0, b2=0.0, c1=0.0, c2=0.0, eps=1.0):
    return TwoScaleSystem(A1=c([[a1]]), A2=c([[a2]]), B1=c([[b1]]), B2=c([[b2]]),
                          C1=v([c1]), C2=v([c2]), omega_A=BOX, omega_B=BOX, epsilon=eps)


def const(T=1.0, value=0.0, box=BOX):
    return ControlSignal.constant([value] * box.dim, T, box)


# ControlSignal

def test_control_signal_rejects_values_outside_box():
    with pytest.raises(ValueError):
        ControlSignal.uniform([0.5, 2.0], 1.0, BOX)


def test_control_signal_rejects_bad_breakpoints():
    with pytest.raises(ValueError):
        ControlSignal([0.5, 1.0], [[0.0]], BOX)
    with pytest.raises(DimensionMismatch):
        ControlSignal([0.0, 0.5, 1.0], [[0.0]], BOX)


def test_control_signal_is_right_continuous():
    sig = ControlSignal.uniform([0.5, -0.5], 1.0, BOX)
    assert sig(0.0)[0] == 0.5 and sig(0.4999)[0] == 0.5
    assert sig(0.5)[0] == -0.5 and sig(1.0)[0] == -0.5


# integrate_stiff

def test_zero_fields_keep_state_constant():
    s = TwoScaleSystem(A1=c([[0.0]]), A2=c([[0.0]]), B1=c([[0.0]]), B2=c([[0.0]]),
                       C1=v([0.0]), C2=v([0.0]), omega_A=BOX, omega_B=BOX, epsilon=0.1)
    tr = integrate_stiff(s, const(), const(), [0.3], [-0.2], 10)
    assert np.all(tr["slow"] == 0.3) and np.all(tr["fast"] == -0.2)


def test_single_implicit_step():
    s = scalar(eps=1e-6)
    tr = integrate_stiff(s, const(1e-2), const(1e-2), [0.0], [1.0], 1)
    y1 = tr["fast"][1, 0]
    assert y1 == pytest.approx(1.0 / (1.0 + 1e-2 / 1e-6), rel=1e-14)
    assert abs(y1) <= 1e-6 / 1e-2 * 1.001


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-8, 10.0), st.floats(1e-4, 1.0), st.floats(0.01, 5.0))
def test_fast_decay_is_unconditionally_stable(eps, h, rate):
    s = scalar(a2=-rate, eps=eps)
    tr = integrate_stiff(s, const(10 * h), const(10 * h), [0.0], [1.0], 10)
    y = np.abs(tr["fast"][:, 0])
    assert np.all(np.diff(y) <= 0)


def test_jin_xin_relaxes_to_equilibrium_and_matches_reference():
    eps = 1e-3
    mdl = get_model("jin-xin-2", epsilon=eps)
    s = mdl.system
    T, N = 0.2, 200
    tr = integrate_stiff(s, const(T, box=s.omega_A), const(T, box=s.omega_B),
                         mdl.z0, mdl.equilibrium(mdl.z0) + 0.1, N, names=mdl.layout)
    assert local_equilibrium_residual(mdl, tr.final, [0.0]) <= 10 * eps
    m = s.m

    def rhs(t, x):
        z, y = x[:m], x[m:]
        return np.concatenate([s.slow_drift(z, y, [0.0]), s.fast_bracket(z, y, [0.0]) / eps])

    ref = solve_ivp(rhs, (0, T), tr.states[0], method="Radau", rtol=1e-10, atol=1e-12)
    gap = np.max(np.abs(ref.y[:m, -1] - tr.final[:m]))
    assert gap <= 5e-3


def test_bounds_monitor_warns_once():
    s = scalar(c2=5.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        integrate_stiff(s, const(), const(), [0.0], [0.0], 20, bounds=ControlBox.symmetric(1.0))
    assert sum(issubclass(w.category, BoundsExceededWarning) for w in caught) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_overflow_reports_step():
    s = scalar(a1=1e200, c2=1e300, eps=1e-3)
    with pytest.raises(NonFiniteState) as info:
        integrate_stiff(s, const(), const(), [0.0], [1e300], 5)
    assert info.value.step >= 1


def test_initial_state_dimension_checked():
    with pytest.raises(DimensionMismatch):
        integrate_stiff(scalar(), const(), const(), [0.0, 1.0], [0.0], 5)


# integrate_reduced

def linear(rate=-1.0):
    return ReducedSystem(1, lambda z, a, b: rate * z, (BOX, BOX))


def test_reduced_zero_rhs():
    red = ReducedSystem(1, lambda z, a, b: np.zeros(1), (BOX, BOX))
    assert np.all(integrate_reduced(red, const(), const(), z0=[2.0], steps=5)["slow"] == 2.0)


def test_rk4_exponential():
    tr = integrate_reduced(linear(), const(), const(), z0=[1.0], steps=100)
    assert tr.final[0] == pytest.approx(np.exp(-1), abs=1e-8)


def test_rk4_order():
    errs = [abs(integrate_reduced(linear(), const(), const(), z0=[1.0], steps=N).final[0]
                - np.exp(-1)) for N in (10, 20)]
    assert np.log2(errs[0] / errs[1]) >= 3.5


def test_time_reversal():
    fwd = integrate_reduced(linear(-1.0), const(), const(), z0=[1.0], steps=200)
    back = integrate_reduced(linear(1.0), const(), const(), z0=fwd.final, steps=200)
    assert back.final[0] == pytest.approx(1.0, abs=1e-6)


def test_reduced_goldstein_taylor_conserves_mass():
    mdl = get_model("goldstein-taylor-2", H=np.zeros(16))
    red = build_reduced(mdl.system)
    tr = integrate_reduced(red, const(box=red.omega_A), const(box=red.omega_B), z0=mdl.z0,
                           steps=1000)
    mass = tr.states.sum(axis=1)
    assert np.max(np.abs(mass - mass[0])) <= 1e-12


def test_reduced_signal_count_checked():
    with pytest.raises(DimensionMismatch):
        integrate_reduced(linear(), const(), z0=[1.0], steps=5)


# integrate_three_scale

def three(eps=0.1, zero=True):
    z = 0.0 if zero else 1.0
    return ThreeScaleSystem(A0=c([[z]]), A1=c([[z]]), A2=c([[-1.0]]), A3=c([[-1.0]]),
                            B1=c([[0.0]]), B2=c([[z]]), B3=c([[z]]),
                            C1=v([0.0]), C2=v([0.0]), C3=v([0.0]),
                            omega_A=BOX, omega_B=BOX, omega_G=BOX, epsilon=eps)


def test_three_scale_decay_with_slow_constant():
    tr = integrate_three_scale(three(), const(), const(), const(), [0.4], [1.0], [1.0], 50)
    assert np.all(tr["slow"] == 0.4)
    assert abs(tr["meso"][-1, 0]) < 1e-3 and abs(tr["micro"][-1, 0]) < 1e-10
    assert np.all(np.diff(np.abs(tr["meso"][:, 0])) <= 0)


def test_three_scale_jin_xin_transients_are_ordered():
    mdl = get_model("jin-xin-3", epsilon=1e-2)
    s = mdl.system
    sig = [const(0.5, box=b) for b in (s.omega_A, s.omega_B, s.omega_G)]
    eq = mdl.equilibrium(mdl.z0)
    tr = integrate_three_scale(s, *sig, mdl.z0, eq[:s.n] + 0.5, eq[s.n:] + 0.5, 500,
                               names=mdl.layout)
    first = {}
    for block in ("meso", "micro"):
        res = [local_equilibrium_residual(mdl, x, [0.0], [0.0], block=block) for x in tr.states]
        first[block] = next(k for k, r in enumerate(res) if r < 2e-2)
    assert first["micro"] < first["meso"]


def test_three_scale_unit_epsilon_is_first_order_accurate():
    s = three(eps=1.0, zero=False)
    x0 = np.array([0.5, 1.0, -1.0])

    def rhs(t, x):
        return np.array([x[1] + x[2], -x[1], -x[2]])

    ref = solve_ivp(rhs, (0, 1), x0, method="RK45", rtol=1e-12, atol=1e-12).y[:, -1]
    errs = []
    for N in (100, 200):
        tr = integrate_three_scale(s, const(), const(), const(), x0[:1], x0[1:2], x0[2:], N)
        errs.append(np.max(np.abs(tr.final - ref)))
    assert 1.6 <= errs[0] / errs[1] <= 2.4


# trajectory_error and export

def _traj(offset=0.0, n=11):
    t = np.linspace(0, 1, n)
    return Trajectory(t, np.column_stack([t, t + offset]), {"slow": slice(0, 1), "fast": slice(1, 2)})


def test_error_identical_and_offset():
    assert trajectory_error(_traj(), _traj(), "slow") == 0.0
    assert trajectory_error(_traj(), _traj(0.25), "fast") == 0.25


def test_error_grid_mismatch():
    with pytest.raises(GridMismatch):
        trajectory_error(_traj(), _traj(n=12), "slow")
    with pytest.raises(GridMismatch):
        trajectory_error(_traj(), _traj(), "micro")


def test_csv_header_and_precision(tmp_path):
    mdl = get_model("affine-2")
    s = mdl.system
    tr = integrate_stiff(s, const(), const(), [0.1], [0.2], 4, names=mdl.layout)
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time,slow_0,fast_0"
    assert len(lines) == 6
    back = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(back[:, 1:], tr.states)
