"""Acceptance criteria, each at its stated tolerance.

A summary line per criterion is printed at the end of the pytest run.
Criterion 9 solves the default prisms for j = 2 and j = 3 and takes several minutes.
"""
import time

import numpy as np
import pytest

from layered_ac.assemble import ReflectionAssembly, check_assembly, rotation_matrix, sector_index, to_prism
from layered_ac.config import RunConfig
from layered_ac.one_dim import (
    Profile1D,
    equipartition,
    find_heteroclinics,
    l2_distance,
    reduced_energy,
    reference_profile,
    symmetrize1d,
)
from layered_ac.optimize import check_gradient, smallest_eigenvalue
from layered_ac.pipeline import Pipeline
from layered_ac.potential import make_potential, well_constants
from layered_ac.prism3d import fill_ghosts, initial_prism, prism_energy
from layered_ac.strip2d import Field2D, midline_distance, phi2L, solve_hetero2d, strip_energy

P = make_potential()
SCALAR_M1 = 4.0 / 3.0 * np.sqrt(2.0)
SCALAR_CONNECTION_DEFAULT = 4.0 / 3.0 * np.sqrt(10.0)


@pytest.fixture(scope="module")
def pipe(tmp_path_factory):
    return Pipeline(RunConfig(), str(tmp_path_factory.mktemp("acceptance")))


@pytest.fixture(scope="module")
def stage1(pipe):
    t0 = time.perf_counter()
    pipe.heteroclinic()
    pipe.spectrum()
    pipe.check()
    elapsed = time.perf_counter() - t0
    st = pipe.manifest.stages
    return pipe, pipe._load_minimizers(), st, elapsed


@pytest.mark.criterion(1, "scalar oracle")
def test_criterion_1_scalar_oracle(record_property):
    p = make_potential(alpha=0.0, gamma=1.0)
    t0 = time.perf_counter()
    ms = find_heteroclinics(p, 8.0, 3201)
    elapsed = time.perf_counter() - t0
    rel = abs(ms.m1 - SCALAR_M1) / SCALAR_M1
    record_property("detail", f"{len(ms.least())} minimiser(s), m1 = {ms.m1:.7f}, rel. err {rel:.2e}, {elapsed:.1f} s")
    assert len(ms.profiles) == 1 and len(ms.least()) == 1
    assert ms.scalar_flags[0]
    assert rel < 5e-3
    assert elapsed < 10.0


@pytest.mark.criterion(2, "two nonscalar minimisers and certificate")
def test_criterion_2_default_minimisers(stage1, record_property):
    pipe, ms, st, elapsed = stage1
    idx = ms.least()
    q, qb = (ms.profiles[i] for i in idx)
    omega = st["spectrum"]["summary"]["omega_min_minimal"]
    record_property("detail", f"m1 = {ms.m1:.7f}, |q2(0)| = {abs(ms.q2_at_0[idx[0]]):.4f}, omega* = {omega:.4g}, "
                              f"{elapsed:.1f} s")
    assert len(idx) == 2
    np.testing.assert_allclose(qb.values, q.bar().values, atol=1e-6)
    assert min(abs(ms.q2_at_0[i]) for i in idx) > 0.05
    assert ms.m1 < SCALAR_CONNECTION_DEFAULT
    chk = st["check"]["summary"]
    assert chk["star"] and chk["star_star"] and chk["passed"]
    assert omega > 0
    assert elapsed < 60.0


@pytest.mark.criterion(3, "gradient verification")
def test_criterion_3_gradients(coarse_prism, record_property):
    rng = np.random.default_rng(11)
    e1 = 0.0
    for _ in range(10):
        q = reference_profile(4.0, 41).values + 0.3 * rng.standard_normal((41, 2))
        q[0], q[-1] = [-1.0, 0.0], [1.0, 0.0]
        q = symmetrize1d(Profile1D(4.0, q))
        E = reduced_energy(P, q.X, q.n, base=q.half)
        e1 = max(e1, check_gradient(E, E.pack(q.half)))

    ms = find_heteroclinics(P, 2.0, 21)
    e2 = 0.0
    for _ in range(10):
        v = Field2D.y_constant(ms.profiles[0], 0.6, 0.2)
        Q = v.quarter + 0.2 * rng.standard_normal(v.quarter.shape)
        Q[-1] = [1.0, 0.0]
        Q[0, :, 0] = 0.0
        Q[:, 0, 1] = 0.0
        E = strip_energy(P, ms.level, 2.0, 0.2, 0.6, 0.2, base=Q)
        e2 = max(e2, check_gradient(E, E.pack(Q)))

    grid, level, _, tab, vq = coarse_prism
    e3 = 0.0
    for _ in range(10):
        U = initial_prism(grid, vq) + 0.1 * rng.standard_normal(grid.shape + (2,))
        E = prism_energy(P, level, tab, grid, cap=vq.quarter, base=fill_ghosts(U, grid.J))
        # quartic in every nodal value: the five-point stencil is exact up to rounding
        e3 = max(e3, check_gradient(E, E.pack(U), h=1e-3, order=4))
    record_property("detail", f"phi1 {e1:.1e}, phi2L {e2:.1e}, phi3 {e3:.1e}")
    assert e1 < 1e-6
    assert e2 < 1e-5
    assert e3 < 1e-5


@pytest.mark.criterion(4, "equipartition")
def test_criterion_4_equipartition(stage1, record_property):
    _, ms, _, _ = stage1
    worst = max(equipartition(P, q) for q in ms.profiles)
    record_property("detail", f"worst relative defect {worst:.2e} over {len(ms.profiles)} profiles")
    assert worst < 1e-3


@pytest.mark.criterion(5, "tail decay rate")
def test_criterion_5_decay(stage1, record_property):
    _, _, st, _ = stage1
    rates = st["heteroclinic"]["summary"]["decay_rate"]
    floor = 0.8 * np.sqrt(well_constants(P).lambda_min_plus)
    record_property("detail", f"rates {', '.join(f'{r:.4f}' for r in rates)} vs floor {floor:.4f}")
    assert len(rates) == 2
    assert min(rates) >= floor


@pytest.mark.criterion(6, "strip level table")
def test_criterion_6_table(stage1, record_property):
    pipe = stage1[0]
    t0 = time.perf_counter()
    s = pipe.m2l()["summary"]
    elapsed = time.perf_counter() - t0
    d = np.load(pipe.path("m2l_table.npz"))
    Ls, vals = d["Ls"], d["values"]
    record_property("detail", f"m2 = {s['m2']:.6f}, slope {s['fit_slope']:.3f}, R^2 {s['fit_r_squared']:.4f}, "
                              f"defect {s['monotone_defect']:.1e}, {elapsed:.0f} s")
    np.testing.assert_allclose(Ls, [0.5, 1, 2, 3, 4, 6, 8, 12])
    assert np.all(np.diff(vals) >= -1e-8)
    assert s["fit_slope"] < 0 and s["fit_r_squared"] > 0.9
    assert np.all(vals <= s["m2"])
    assert elapsed < 600.0


@pytest.mark.criterion(7, "renormalisation identity")
def test_criterion_7_renormalisation(stage1, record_property):
    _, ms, _, _ = stage1
    worst = 0.0
    for i in ms.least():
        for L in (0.5, 2.0, 5.0):
            worst = max(worst, abs(phi2L(P, ms.level, Field2D.y_constant(ms.profiles[i], L, 0.05))))
    record_property("detail", f"max |phi2L| = {worst:.1e}")
    assert worst < 1e-10


@pytest.mark.criterion(8, "planar heteroclinic")
def test_criterion_8_hetero2d(stage1, record_property):
    pipe = stage1[0]
    s = pipe.hetero2d()["summary"]
    h = float(pipe.cfg["strip.h"])
    level, q, _ = pipe._coarse_1d(float(pipe.cfg["strip.X"]), h, pipe._branch_sign())
    e8 = solve_hetero2d(P, level, q, 8.0, h)
    e16 = solve_hetero2d(P, level, q, 16.0, h)
    dm = midline_distance(e8.field, q)
    half = 0.5 * l2_distance(q, q.bar())
    record_property("detail", f"mid-line {dm:.4f} vs {half:.4f} - 0.02, rate {s['decay_rate']:.3f}, "
                              f"|E(16) - E(8)| = {abs(e16.energy - e8.energy):.1e}")
    assert s["energy"] == e8.energy
    assert dm >= half - 0.02
    assert s["decay_rate"] > 0
    assert abs(e16.energy - e8.energy) < 1e-6


@pytest.mark.criterion(9, "prism and assembly")
@pytest.mark.parametrize("j", [2, 3])
def test_criterion_9_prism_assembly(stage1, j, record_property):
    pipe = stage1[0]
    if "m2l-table" not in pipe.manifest.stages:
        pipe.m2l()
    if "hetero2d" not in pipe.manifest.stages:
        pipe.hetero2d()
    t0 = time.perf_counter()
    pipe.prism(j)
    elapsed = time.perf_counter() - t0
    asm = pipe.load_assembly(j)
    assert isinstance(asm, ReflectionAssembly)
    rep = check_assembly(asm)
    far = max(d[-1] for d in rep.ray_distance.values())
    ok_trend = all(d[-1] < d[0] for d in rep.ray_distance.values())
    record_property("detail", f"j={j}: periodicity {rep.periodicity:.1e}, face jump {rep.face_jump:.1e} "
                              f"(5 x interp {5 * rep.interp_error:.1e}), mid-ray at 0.8Z {far:.2e}, "
                              f"{elapsed:.0f} s")
    assert np.isclose(rep.rho[0], 0.3 * asm.Z) and np.isclose(rep.rho[-1], 0.8 * asm.Z)
    assert rep.periodicity < 1e-10
    assert rep.face_jump < 5 * rep.interp_error
    assert ok_trend
    assert far < 0.1
    assert elapsed < 1800.0
    pipe.assemble(j)


@pytest.mark.criterion(10, "oracle equivalence")
def test_criterion_10_oracles(record_property):
    worst = 0.0
    for n in (2, 10, 50, 100, 200, 400):
        rng = np.random.default_rng(n)
        B = rng.standard_normal((n, n))
        A = B + B.T
        exact = np.linalg.eigvalsh(A)[0]
        lam, _ = smallest_eigenvalue(lambda x: A @ x, dim=n, tol=1e-10)
        worst = max(worst, abs(lam - exact) / abs(exact))
    rng = np.random.default_rng(0)
    y, z = rng.uniform(-5, 5, (2, 10_000))
    tiled = True
    for j in range(2, 9):
        k = sector_index(y, z, j)
        _, yp, zp, _ = to_prism(np.zeros_like(y), y, z, j)
        inside = np.all((zp >= 0) & (np.abs(yp) <= zp * np.tan(np.pi / (2 * j)) + 1e-12))
        moved = rotation_matrix(j) @ np.stack([np.zeros_like(y), y, z])
        step = np.array_equal(sector_index(moved[1], moved[2], j), (k + 1) % (2 * j))
        tiled = tiled and inside and step and set(np.unique(k)) == set(range(2 * j))
    record_property("detail", f"eigenvalue rel. err {worst:.1e}; tiling exact: {tiled}")
    assert worst < 1e-6
    assert tiled
