import numpy as np
import pytest

from stiffrelax import (build_reduced, get_model, jin_xin_diagonalize, list_models,
                        local_equilibrium_residual, make_upwind)
from stiffrelax.errors import DensityFloor, LayoutMismatch, NegativeTemperature
from stiffrelax.models import ZOO

D16 = 16


def zero_controls(sys):
    boxes = [sys.omega_A, sys.omega_B] + ([sys.omega_G] if hasattr(sys, "omega_G") else [])
    return [b.center for b in boxes]


# Upwind operators

def test_upwind_example():
    op = make_upwind(4, 1.0)
    assert np.array_equal(op.matrix @ [1.0, 2.0, 3.0, 4.0], [-3.0, 1.0, 1.0, 1.0])
    fwd = make_upwind(4, 1.0, "forward")
    assert np.array_equal(fwd.matrix @ [1.0, 2.0, 3.0, 4.0], [1.0, 1.0, 1.0, -3.0])


@pytest.mark.parametrize("variant", ["backward", "forward"])
def test_upwind_row_and_column_sums_vanish(variant):
    M = make_upwind(9, 0.3, variant).matrix
    assert np.allclose(M.sum(axis=0), 0, atol=1e-14) and np.allclose(M.sum(axis=1), 0, atol=1e-14)


def test_upwind_rejects_bad_parameters():
    with pytest.raises(ValueError):
        make_upwind(2, 0.1)
    with pytest.raises(ValueError):
        make_upwind(8, 0.0)
    with pytest.raises(ValueError):
        make_upwind(8, 0.1, "central")


def test_upwind_first_order_consistency():
    errs = []
    for d in (32, 64, 128):
        x = np.arange(d) / d
        M = make_upwind(d, 1.0 / d).matrix
        errs.append(np.max(np.abs(M @ np.sin(2 * np.pi * x) - 2 * np.pi * np.cos(2 * np.pi * x))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 0.9)


def test_backward_times_forward_is_negative_semidefinite():
    L = make_upwind(12, 0.1).matrix @ make_upwind(12, 0.1, "forward").matrix
    assert np.allclose(L, L.T, atol=1e-12)
    assert np.max(np.linalg.eigvalsh(L)) <= 1e-10


# Jin-Xin characteristics

@pytest.mark.parametrize("a", [4.0, 1.0, 0.37])
def test_diagonalization(a):
    dg = jin_xin_diagonalize(a)
    assert np.max(np.abs(dg.T @ dg.Lambda @ dg.Tinv - dg.flux_matrix)) <= 1e-12
    assert np.max(np.abs(dg.T @ dg.Tinv - np.eye(3))) <= 1e-12
    s = np.sqrt(a)
    assert np.allclose(np.diag(dg.Lambda), [0.0, s, -s])


def test_diagonalization_values_for_a_four():
    assert np.array_equal(np.diag(jin_xin_diagonalize(4.0).Lambda), [0.0, 2.0, -2.0])


def test_first_characteristic_is_omega():
    dg = jin_xin_diagonalize(2.0)
    xi = dg.characteristic(0.3, -1.2, 0.7)
    assert xi[0] == pytest.approx(0.7)


def test_diagonalization_rejects_non_positive():
    with pytest.raises(ValueError):
        jin_xin_diagonalize(0.0)


# Registry and equilibria

def test_registry_lists_every_model():
    names = list_models()
    assert set(ZOO) <= set(names) and len(ZOO) == 8
    with pytest.raises(KeyError):
        get_model("no-such-model")


@pytest.mark.parametrize("name", ZOO)
def test_initial_state_sits_on_equilibrium(name):
    mdl = get_model(name)
    ctrl = zero_controls(mdl.system)
    res = local_equilibrium_residual(mdl, mdl.initial_state(), *ctrl[1:])
    assert res <= 1e-12


@pytest.mark.parametrize("name", ZOO)
def test_layout_covers_state(name):
    mdl = get_model(name)
    covered = sorted(i for s in mdl.layout.values() for i in range(s.start, s.stop))
    assert covered == list(range(mdl.state_dim))
    with pytest.raises(LayoutMismatch):
        mdl.split(np.zeros(mdl.state_dim + 1))


def test_jin_xin_residual_tracks_perturbation():
    mdl = get_model("jin-xin-2")
    state = mdl.initial_state()
    state[mdl.layout["w"]] += 0.125
    assert local_equilibrium_residual(mdl, state, [0.0]) == pytest.approx(0.125)


# Reduced limits

def test_goldstein_taylor_reduces_to_heat_flow():
    mdl = get_model("goldstein-taylor-2")
    red = build_reduced(mdl.system)
    d, dx = D16, 1.0 / D16
    lap = make_upwind(d, dx).matrix @ make_upwind(d, dx, "forward").matrix
    rho = mdl.z0
    assert np.allclose(red.rhs(rho, [0.0], [0.0]), lap @ rho, atol=1e-10)


def test_shallow_water_height_follows_burgers():
    mdl = get_model("shallow-water-2")
    red = build_reduced(mdl.system)
    z = mdl.z0.copy()
    z[D16:] = 0.3 * np.cos(2 * np.pi * np.arange(D16) / D16)
    h = z[:D16]
    D = make_upwind(D16, 1.0 / D16).matrix
    assert np.allclose(red.rhs(z, [0.0], [0.0])[:D16], -D @ (0.5 * h * h), atol=1e-10)


def test_traffic_density_follows_lwr():
    mdl = get_model("traffic")
    red = build_reduced(mdl.system)
    z = mdl.z0
    rho = z[:D16]
    V = mdl.fluxes["V"](rho)
    D = make_upwind(D16, 1.0 / D16).matrix
    lwr = -V * (D @ rho) - rho * (D @ V)
    assert np.allclose(red.rhs(z, [0.0], [0.0])[:D16], lwr, atol=1e-10)


def test_traffic_density_floor():
    mdl = get_model("traffic", rho0=np.full(D16, -0.1))
    with pytest.raises(DensityFloor):
        mdl.equilibrium(mdl.z0)


def test_granular_negative_temperature():
    mdl = get_model("granular", temperature="energy")
    z = mdl.z0.copy()
    z[2 * D16:] = 0.0
    with pytest.raises(NegativeTemperature):
        mdl.system.A2(z)


def test_granular_elastic_collisions_freeze_fast_state():
    mdl = get_model("granular", e=1.0)
    s = mdl.system
    y = np.random.default_rng(0).standard_normal(s.n)
    assert np.all(s.fast_bracket(mdl.z0, y, [0.0]) == 0.0)


def test_goldstein_taylor_three_scale_default_freezes_w():
    mdl = get_model("goldstein-taylor-3")
    assert mdl.params["a"] == 0.0 and mdl.params["b"] == 0.0
    s = mdl.system
    z, y, x = mdl.split(mdl.initial_state())
    drift = s.slow_drift(z, y, x, [0.0])
    assert np.all(drift[2 * D16:] == 0.0)
