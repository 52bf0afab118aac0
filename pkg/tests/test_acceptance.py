"""Acceptance suite: ten end-to-end checks at their stated tolerances.

Each test records a one-line verdict that the conftest prints after the run.
"""

import filecmp
import subprocess
import sys
import time

import numpy as np

from stiffrelax import (ControlBox, CostSpec, Grid, MatrixField, TwoScaleSystem, box_sup,
                        effective_hamiltonian, get_model, jin_xin_diagonalize,
                        lambda1_closed_form, solve_cell, solve_hjb_effective, solve_hjb_full,
                        solve_hjb_multiscale_effective, solve_static)
from stiffrelax.experiments import (decay_time, estimate_occupational_measure, load_config,
                                    run_trajectory_sweep, run_value_sweep)
from stiffrelax.hjb import full_drifts, reduced_drifts, stable_steps
from stiffrelax.models import ZOO
from stiffrelax.reduction import cascade_reduce, solve_micro_static

from conftest import CONFIG_DIR

TRAJECTORY_CONFIGS = ["jin_xin", "goldstein_taylor", "shallow_water", "traffic", "granular"]


def _scalar_system(a1, a2, b1, b2, c1, c2, eps=1e-2):
    return TwoScaleSystem(
        A1=MatrixField.constant([[a1]]), A2=MatrixField.constant([[a2]]),
        B1=MatrixField.constant([[b1]]), B2=MatrixField.constant([[b2]]),
        C1=MatrixField.vector([c1]), C2=MatrixField.vector([c2]),
        omega_A=ControlBox.symmetric(1.0), omega_B=ControlBox.symmetric(1.0), epsilon=eps)


def test_static_reduction_identity(record):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for name in ZOO:
        mdl = get_model(name)
        s = mdl.system
        two = s.embedded_two_scale() if mdl.three_scale else s
        for _ in range(1000):
            z = mdl.z0 + 0.02 * rng.standard_normal(s.m)
            beta = rng.uniform(s.omega_B.lower, s.omega_B.upper)
            psi = solve_static(two, z, beta)
            C2 = two.C2(z)
            r = np.max(np.abs(two.A2(z) @ psi + two.B2(z) @ beta + C2))
            worst = max(worst, r / (1e-10 * (1 + np.max(np.abs(C2)))))
            if mdl.three_scale:
                g = rng.uniform(s.omega_G.lower, s.omega_G.upper)
                x = solve_micro_static(s, z, g)
                C3 = s.C3(z)
                r = np.max(np.abs(s.A3(z) @ x + s.B3(z) @ g + C3))
                worst = max(worst, r / (1e-10 * (1 + np.max(np.abs(C3)))))
    wall = time.perf_counter() - t0
    ok = worst <= 1.0 and wall < 5.0
    record(1, ok, f"worst residual / tolerance = {worst:.2e}, {wall:.1f} s")
    assert ok


def test_trajectory_relaxation(record):
    t0 = time.perf_counter()
    lines, ok = [], True
    for stem in TRAJECTORY_CONFIGS:
        table, _ = run_trajectory_sweep(load_config(CONFIG_DIR / f"trajectory_{stem}.json"))
        mu = table.column("mu_slow")
        ratio = mu[2] / mu[1]
        good = bool(np.all(np.diff(mu) < 0) and ratio <= 0.5)
        ok &= good
        lines.append(f"{stem} ratio {ratio:.2f}")
    wall = time.perf_counter() - t0
    ok &= wall < 60.0
    record(2, ok, f"{'; '.join(lines)}; {wall:.1f} s")
    assert ok


def test_cell_oracle(record):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    cases = [(_scalar_system(1.0, -1.0, 0.0, 1.0, 0.0, 0.0), np.array([2.0]), 2.0)]
    for _ in range(10):
        a1 = rng.choice([-1, 1]) * rng.uniform(0.5, 2.0)
        a2 = -rng.uniform(0.5, 2.0)
        b2 = rng.uniform(0.5, 1.5)
        c2 = rng.uniform(-0.2, 0.2) * b2
        p = rng.choice([-1, 1]) * rng.uniform(0.5, 2.0)
        cases.append((_scalar_system(a1, a2, 0.0, b2, 0.0, c2), np.array([p]), None))
    worst = 0.0
    bench_ok = True
    for s, p, expected in cases:
        z = np.zeros(1)
        exact = lambda1_closed_form(s, z, p)
        if expected is not None:
            bench_ok &= abs(exact - expected) <= 1e-12
        reach = (abs(s.C2(z)[0]) + abs(s.B2(z)[0, 0])) / abs(s.A2(z)[0, 0])
        grid = Grid([-reach - 1.0], [reach + 1.0], (201,))
        cell = solve_cell(s, z, p, grid, 1e-3)
        worst = max(worst, abs(cell.lam - exact) / abs(exact))
    wall = time.perf_counter() - t0
    ok = bench_ok and worst <= 0.05 and wall < 30.0
    record(3, ok, f"worst relative gap {worst:.2e} over 11 instances, {wall:.1f} s")
    assert ok


def _brute_box(c, box, n=201):
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(box.lower, box.upper)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.dim)
    return np.max(-pts @ c)


def test_hamiltonian_exactness(record):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(1, 3))
        lo = rng.uniform(-2, 1, dim)
        box = ControlBox(lo, lo + rng.uniform(0.1, 3, dim))
        c = rng.standard_normal(dim)
        worst = max(worst, abs(box_sup(c, box)[0] - _brute_box(c, box)))

        m, n = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        A2 = -np.eye(n) * rng.uniform(0.5, 2) + 0.2 * rng.standard_normal((n, n))
        mats = dict(A1=rng.standard_normal((m, n)), A2=A2, B1=rng.standard_normal((m, 1)),
                    B2=rng.standard_normal((n, 1)), C1=rng.standard_normal(m),
                    C2=rng.standard_normal(n))
        oa = ControlBox([rng.uniform(-2, 0)], [rng.uniform(0.1, 2)])
        ob = ControlBox([rng.uniform(-2, 0)], [rng.uniform(0.1, 2)])
        s = TwoScaleSystem(**{k: MatrixField.constant(v) for k, v in mats.items()},
                           omega_A=oa, omega_B=ob, epsilon=1.0)
        z, p = np.zeros(m), rng.standard_normal(m)
        al = np.linspace(oa.lower[0], oa.upper[0], 201)
        be = np.linspace(ob.lower[0], ob.upper[0], 201)
        psi = np.array([solve_static(s, z, [b]) for b in be])  # (201, n)
        slow = psi @ mats["A1"].T  # (201, m)
        vals = -(slow @ p)[None, :] - np.outer(al, mats["B1"].T @ p) - p @ mats["C1"]
        worst = max(worst, abs(effective_hamiltonian(s, z, p) - vals.max()))
    wall = time.perf_counter() - t0
    ok = worst <= 1e-6 and wall < 10.0
    record(4, ok, f"worst gap {worst:.1e} over 100 instances, {wall:.1f} s")
    assert ok


def test_hjb_convergence(record):
    t0 = time.perf_counter()
    cfg = load_config(CONFIG_DIR / "value_affine.json")
    table, _ = run_value_sweep(cfg)
    gaps, h = table.column("gap_equilibrium"), table.column("h")
    dz = cfg.slow_grid.build().spacing[0]
    bound = 5 * (dz + h[-1]) + 10 * 1e-2
    wall = time.perf_counter() - t0
    ok = bool(np.all(np.diff(gaps) < 0) and gaps[-1] <= bound and wall < 120.0)
    record(5, ok, f"gaps {', '.join(f'{g:.3f}' for g in gaps)}; bound {bound:.3f}; {wall:.1f} s")
    assert ok


def test_jin_xin_diagonalization(record):
    rng = np.random.default_rng(6)
    t0 = time.perf_counter()
    worst, lam_ok = 0.0, True
    for a in rng.uniform(0, 10, 20):
        a = max(a, 1e-3)
        dg = jin_xin_diagonalize(a)
        flux = np.array([[0.0, 1.0, 1.0], [a, 0.0, 0.0], [0.0, 0.0, 0.0]])
        worst = max(worst, np.max(np.abs(dg.T @ dg.Lambda @ dg.Tinv - flux)))
        lam_ok &= np.array_equal(dg.Lambda, np.diag([0.0, np.sqrt(a), -np.sqrt(a)]))
    wall = time.perf_counter() - t0
    ok = worst <= 1e-12 and lam_ok and wall < 1.0
    record(6, ok, f"worst reconstruction error {worst:.1e}, {wall:.2f} s")
    assert ok


def test_three_scale_consistency(record):
    t0 = time.perf_counter()
    T = 0.5
    cost = CostSpec(lambda z: 0.0, lambda z: 0.5 * float(z[0]) ** 2, T)

    # decoupled micro scale
    zg = Grid([-2.0], [2.0], (101,))
    dec = get_model("affine-3", a0=0.0, b3=0.0).system
    _, _, f = reduced_drifts(cascade_reduce(dec)[1], zg)
    N = stable_steps(f, zg.spacing, T)
    vm = solve_hjb_multiscale_effective(dec, cost, zg, N)
    ve = solve_hjb_effective(dec.embedded_two_scale(), cost, zg, N)
    decoupled = float(np.max(np.abs(vm.values - ve.values)))

    # coupled: macro solve against a 3-D full solve
    zg = Grid([-2.0], [2.0], (21,))
    g3 = Grid([-2.0] * 3, [2.0] * 3, (21, 11, 11))
    sys3 = get_model("affine-3").system
    _, _, f = reduced_drifts(cascade_reduce(sys3)[1], zg)
    v0 = solve_hjb_multiscale_effective(sys3, cost, zg, stable_steps(f, zg.spacing, T)).final.ravel()
    lift = np.stack([zg.points()[:, 0], np.zeros(zg.size), np.zeros(zg.size)], axis=1)
    errs, grid_terms = {}, {}
    for eps in (1e-1, 1e-2):
        s = sys3.with_epsilon(eps)
        _, _, f = full_drifts(s, g3)
        N = stable_steps(f, g3.spacing, T)
        errs[eps] = float(np.max(np.abs(solve_hjb_full(s, cost, g3, N).interpolate(lift) - v0)))
        grid_terms[eps] = 5 * (zg.spacing[0] + T / N)
    C = max(errs[1e-1] - grid_terms[1e-1], 0.0) / 1e-1
    bound = grid_terms[1e-2] + C * 1e-2
    wall = time.perf_counter() - t0
    ok = decoupled <= 1e-10 and errs[1e-2] <= bound and wall < 180.0
    record(7, ok, f"decoupled gap {decoupled:.1e}; coupled err {errs[1e-2]:.3f} "
                  f"<= {bound:.3f} (C = {C:.2f}); {wall:.1f} s")
    assert ok


def test_occupational_concentration(record):
    t0 = time.perf_counter()
    s = TwoScaleSystem(
        A1=MatrixField.constant(np.eye(1, 2)), A2=MatrixField.constant([[-1.0, 0.3], [0.0, -2.0]]),
        B1=MatrixField.constant([[1.0]]), B2=MatrixField.constant(np.eye(2)),
        C1=MatrixField.vector([0.0]), C2=MatrixField.vector([0.2, -0.1]),
        omega_A=ControlBox.symmetric(1.0), omega_B=ControlBox.symmetric(1.0, 2), epsilon=1.0)
    z, beta = np.zeros(1), np.array([0.3, -0.2])
    psi = solve_static(s, z, beta)
    T = 100 * decay_time(s, z)
    hist = estimate_occupational_measure(s, z, beta, T, bins=50,
                                         box=ControlBox(psi - 5, psi + 5),
                                         y0=psi + np.array([0.5, -0.4]))
    mass = hist.mass_near(1)
    wall = time.perf_counter() - t0
    ok = mass >= 0.99 and abs(hist.masses.sum() - 1) <= 1e-12 and wall < 10.0
    record(8, ok, f"mass near equilibrium {mass:.4f}, {wall:.2f} s")
    assert ok


def test_scheme_properties(record):
    rng = np.random.default_rng(9)
    t0 = time.perf_counter()
    red = get_model("affine-2").system
    zg = Grid([-2.0], [2.0], (101,))
    nodes = zg.axes[0]
    T, N = 0.5, 20
    worst_mono, worst_shift = 0.0, 0.0
    for _ in range(10):
        phi1 = rng.uniform(-1, 1, zg.size)
        phi2 = phi1 + rng.uniform(0, 1, zg.size)
        shift = rng.uniform(-5, 5)
        run = lambda vals: solve_hjb_effective(
            red, CostSpec(lambda z: 0.0, lambda z: float(np.interp(z[0], nodes, vals)), T), zg, N)
        v1, v2, v3 = run(phi1), run(phi2), run(phi1 + shift)
        worst_mono = max(worst_mono, float(np.max(v1.values - v2.values)))
        worst_shift = max(worst_shift, float(np.max(np.abs(v3.values - v1.values - shift))))
    wall = time.perf_counter() - t0
    ok = worst_mono <= 1e-12 and worst_shift <= 1e-12 and wall < 30.0
    record(9, ok, f"max(V1 - V2) = {worst_mono:.1e}, shift error {worst_shift:.1e}, {wall:.1f} s")
    assert ok


def _cli(args, out):
    return subprocess.run([sys.executable, "-m", "stiffrelax.cli", *args, "--out", str(out)],
                          capture_output=True, text=True, check=True)


def test_determinism(record, tmp_path):
    t0 = time.perf_counter()
    commands = {"trajectory": "sweep-trajectory", "value": "sweep-value", "cell": "cell",
                "occupational": "occmeasure"}
    mismatched, compared = [], 0
    for path in sorted(CONFIG_DIR.glob("*.json")):
        cmd = commands[load_config(path).experiment]
        a, b = tmp_path / path.stem / "a", tmp_path / path.stem / "b"
        _cli([cmd, str(path)], a)
        _cli([cmd, str(path), "--jobs", "2"], b)
        for f in sorted(a.glob("*.csv")):
            if f.name.endswith("_timing.csv"):
                continue
            compared += 1
            if not filecmp.cmp(f, b / f.name, shallow=False):
                mismatched.append(f.name)
    wall = time.perf_counter() - t0
    ok = compared > 0 and not mismatched
    record(10, ok, f"{compared} CSVs compared across serial and parallel runs, "
                   f"{len(mismatched)} differ; {wall:.1f} s")
    assert ok
