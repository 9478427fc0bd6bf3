import numpy as np
import pytest

from layered_ac.optimize import check_gradient
from layered_ac.potential import make_potential, well_constants
from layered_ac.prism3d import (
    Field3D,
    GridError,
    PrismGrid,
    PrismSolver,
    check_far_field,
    fill_ghosts,
    gradient_norm2_below,
    initial_prism,
    phi3,
    prism_energy,
    renormaliser,
    slice_diagnostics,
    slice_gaps,
)
from layered_ac.strip2d import SIGN_Y, phi2L

P = make_potential()


# -- grid -----------------------------------------------------------------------
def test_grid_geometry():
    g = PrismGrid(2, X=1.0, Z=1.0, hx=0.25, hy=0.25, hz=0.25)
    np.testing.assert_array_equal(g.J, [0, 1, 2, 3, 4])
    assert g.shape == (5, 5, 5)
    assert g.mask().sum() == 5 * (1 + 2 + 3 + 4 + 5)
    assert PrismGrid(3, X=1.0, Z=3.0, hx=0.5, hy=0.5, hz=0.5).tan == pytest.approx(np.tan(np.pi / 6))


def test_unresolved_apex_is_grid_error():
    with pytest.raises(GridError):
        PrismGrid(8, X=2.0, Z=4.0, hx=0.5, hy=0.5, hz=0.5)
    with pytest.raises(ValueError):
        PrismGrid(1)


def test_fill_ghosts_mirrors_across_the_wall():
    U = np.zeros((1, 5, 2, 2))
    U[0, :, 0] = np.arange(10.0).reshape(5, 2)
    U[0, :, 1] = np.arange(10.0, 20.0).reshape(5, 2)
    G = fill_ghosts(U, [2, 1])
    # level 0 reflects about y-index 2
    np.testing.assert_array_equal(G[0, 3, 0], U[0, 1, 0])
    np.testing.assert_array_equal(G[0, 4, 0], U[0, 0, 0])
    # level 1 reflects about y-index 1; past y = 0 the odd-in-y symmetry applies, then clamps
    np.testing.assert_array_equal(G[0, 2, 1], U[0, 0, 1])
    np.testing.assert_array_equal(G[0, 3, 1], SIGN_Y * U[0, 1, 1])
    np.testing.assert_array_equal(G[0, 4, 1], SIGN_Y * U[0, 1, 1])
    np.testing.assert_array_equal(G[0, :3, 0], U[0, :3, 0])


# -- energy -----------------------------------------------------------------------
def perturbed(rng, grid, vq, amp=0.1):
    return initial_prism(grid, vq) + amp * rng.standard_normal(grid.shape + (2,))


def test_gradient_check_random_fields(coarse_prism):
    grid, level, _, tab, vq = coarse_prism
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(10):
        U = perturbed(rng, grid, vq)
        E = prism_energy(P, level, tab, grid, cap=vq.quarter, base=U)
        # the energy is quartic in every nodal value, so the five-point stencil is exact up to rounding
        worst = max(worst, check_gradient(E, E.pack(U), h=1e-3, order=4))
    assert worst < 1e-5


def test_gradient_check_neumann_cap(coarse_prism):
    grid, level, _, tab, vq = coarse_prism
    U = perturbed(np.random.default_rng(4), grid, vq)
    E = prism_energy(P, level, tab, grid, base=U, neumann_cap=True)
    assert check_gradient(E, E.pack(U), h=1e-3, order=4) < 1e-5


def test_constant_in_z_competitor_bound(coarse_prism):
    grid, level, q, tab, vq = coarse_prism
    u = Field3D(grid, initial_prism(grid, vq))
    wz = np.full(grid.Nz + 1, grid.hz)
    wz[[0, -1]] *= 0.5
    e = phi3(P, level, tab, u)
    assert np.isfinite(e)
    assert e <= float(np.sum(wz * (phi2L(P, level, vq) - renormaliser(tab, grid.widths)))) + 1e-9


def test_slice_nonnegativity_on_random_fields(coarse_prism):
    grid, level, _, tab, vq = coarse_prism
    rng = np.random.default_rng(5)
    for _ in range(5):
        u = Field3D(grid, fill_ghosts(perturbed(rng, grid, vq, amp=0.05), grid.J))
        assert phi3(P, level, tab, u) >= -(grid.Nz + 1) * 1e-9
        assert np.all(slice_gaps(P, level, tab, u) >= -1e-9)


# -- solution -----------------------------------------------------------------------
def test_solution_properties(small_prism):
    grid, level, q, tab, vq, sol, _ = small_prism
    u = sol.field
    assert sol.converged and sol.grad_norm <= 1e-8
    assert sol.energy <= phi3(P, level, tab, Field3D(grid, initial_prism(grid, vq)))
    assert sol.energy == pytest.approx(phi3(P, level, tab, u), abs=1e-12)
    assert u.sup_norm() <= P.radius
    m = grid.mask()
    assert np.all(u.values[0, :, :, 0][m[0]] == 0.0)
    assert np.all(u.values[:, 0, :, 1] == 0.0)
    np.testing.assert_array_equal(u.values[:, :, -1][m[:, :, -1]], vq.quarter[:, :grid.Jmax + 1][m[:, :, -1]])


def test_trace_non_increasing(small_prism):
    tr = np.array(small_prism[5].trace)
    assert np.all(np.diff(tr) <= 1e-12 * np.abs(tr[:-1]))


def test_slice_inequality(small_prism):
    grid, level, _, tab, vq, sol, _ = small_prism
    rep = slice_diagnostics(P, level, tab, sol.field, vq)
    assert np.all(rep.gap >= -1e-6)
    assert rep.sup[-1] == 0.0


def test_slice_distance_decreases_beyond_apex(small_prism):
    grid, level, _, tab, vq, sol, _ = small_prism
    rep = slice_diagnostics(P, level, tab, sol.field, vq)
    k = int(np.argmax(rep.l2))
    assert k < grid.Nz // 2
    assert np.all(np.diff(rep.l2[k:]) <= 1e-12)


def test_gradient_energy_bound_on_every_iterate(small_prism):
    grid, level, _, tab, vq, sol, iterates = small_prism
    assert len(iterates) > 5
    for U in iterates[:: max(1, len(iterates) // 10)] + [iterates[-1]]:
        u = Field3D(grid, U)
        e = phi3(P, level, tab, u)
        for r in (1.0, 2.0, grid.Z):
            bound = 2 * (e + r * tab.m2 + grid.tan * r * r * level.value)
            assert gradient_norm2_below(u, r) <= bound + 1e-9


def test_far_field(small_prism):
    sol = small_prism[5]
    ff = check_far_field(sol.field)
    assert ff.clamp_exact
    assert ff.maxdev[1] < ff.maxdev[0]
    lam = np.sqrt(well_constants(P).lambda_min_plus)
    assert 0.5 * lam <= ff.rate <= 2.0 * lam


def test_estimator(coarse_prism):
    grid, level, q, tab, vq = coarse_prism
    est = PrismSolver(j=2, X=grid.X, Z=grid.Z, hx=grid.hx, hy=grid.hy, hz=grid.hz)
    assert est.get_params()["j"] == 2
    est.fit(level=level, table=tab, planar=vq)
    node = [[grid.hx * 3, grid.hy * 2, grid.hz * 6]]
    np.testing.assert_allclose(est.predict(node)[0], est.field_.values[3, 2, 6], atol=1e-14)
    mirrored = est.predict([[-grid.hx * 3, -grid.hy * 2, grid.hz * 6]])[0]
    np.testing.assert_allclose(mirrored, -est.field_.values[3, 2, 6], atol=1e-14)
