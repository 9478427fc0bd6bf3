"""Doubly renormalised energy on the prism ``{z >= 0, |y| <= z tan(theta)}``.

Every z-level of the prism is a strip whose half-width grows linearly with
z. On a Cartesian grid the strip at level k keeps the y-nodes
``0 <= j <= J_k = floor(z_k tan(theta) / hy)``; the slanted wall is a
staircase and the remaining nodes of the bounding box are inactive. Each
level is renormalised by the strip level of its own discrete half-width
``J_k * hy``, computed on the same (x, y) grid, so the slice bracket is
nonnegative up to rounding.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .lattice import LatticeEnergy, folded_weights, radial_truncation, trapezoid_weights
from .one_dim import Level1D, Profile1D, SolverFailure
from .optimize import MinimizeOptions, StallError, minimize
from .potential import PotentialSpec, make_potential
from .strip2d import SIGN_Y, Field2D, M2LTable, _grid_count, m2l_table

logger = logging.getLogger(__name__)


class GridError(ValueError):
    """The prism grid cannot resolve the requested geometry."""


@dataclass(frozen=True)
class PrismGrid:
    j: int
    X: float = 8.0
    Z: float = 12.0
    hx: float = 0.1
    hy: float = 0.15
    hz: float = 0.15
    z_floor: float = 1.0

    def __post_init__(self):
        if int(self.j) != self.j or self.j < 2:
            raise ValueError("symmetry order j must be an integer >= 2")
        for name in ("X", "Z", "hx", "hy", "hz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        _grid_count(self.X, self.hx, "X")
        _grid_count(self.Z, self.hz, "Z")
        J = self.J
        bad = (self.z >= self.z_floor) & (2 * J + 1 < 3)
        if np.any(bad):
            raise GridError(f"levels above z = {self.z_floor} have fewer than 3 active y-nodes; refine hy")

    @property
    def theta(self) -> float:
        return np.pi / (2 * self.j)

    @property
    def tan(self) -> float:
        return float(np.tan(self.theta))

    @property
    def Nx(self) -> int:
        return _grid_count(self.X, self.hx, "X")

    @property
    def Nz(self) -> int:
        return _grid_count(self.Z, self.hz, "Z")

    @property
    def z(self) -> np.ndarray:
        return np.arange(self.Nz + 1) * self.hz

    @property
    def J(self) -> np.ndarray:
        return np.floor(self.z * self.tan / self.hy + 1e-9).astype(int)

    @property
    def Jmax(self) -> int:
        return int(self.J[-1])

    @property
    def widths(self) -> np.ndarray:
        """Discrete half-width ``J_k * hy`` of each level."""
        return self.J * self.hy

    @property
    def shape(self):
        return (self.Nx + 1, self.Jmax + 1, self.Nz + 1)

    def mask(self) -> np.ndarray:
        jj = np.arange(self.Jmax + 1)
        m = jj[None, :, None] <= self.J[None, None, :]
        return np.broadcast_to(m, self.shape).copy()

    def level_weights(self) -> np.ndarray:
        """Folded y-weights of every level, zero on inactive nodes; shape (Jmax+1, Nz+1)."""
        W = np.zeros((self.Jmax + 1, self.Nz + 1))
        for k, Jk in enumerate(self.J):
            W[:Jk + 1, k] = folded_weights(int(Jk), self.hy)
        return W


def fill_ghosts(U, J):
    """Overwrite inactive nodes with mirror images across the staircase wall.

    Level k is reflected about its last active node ``J_k``; a reflected
    index that falls below ``y = 0`` continues through the odd-in-y symmetry
    of the second component, and anything further out is clamped.
    """
    U = np.array(U, dtype=float, copy=True)
    Jmax = U.shape[1] - 1
    jj = np.arange(Jmax + 1)
    for k, Jk in enumerate(J):
        Jk = int(Jk)
        if Jk >= Jmax:
            continue
        ghost = jj[Jk + 1:]
        src = 2 * Jk - ghost
        neg = src < 0
        src_abs = np.minimum(np.abs(src), Jk)
        vals = U[:, src_abs, k].copy()
        vals[:, neg] *= SIGN_Y
        U[:, Jk + 1:, k] = vals
    return U


@dataclass
class Field3D:
    grid: PrismGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape + (2,):
            raise ValueError("field values do not match the prism grid")

    @property
    def x(self):
        return np.arange(self.grid.Nx + 1) * self.grid.hx

    @property
    def y(self):
        return np.arange(self.grid.Jmax + 1) * self.grid.hy

    @property
    def z(self):
        return self.grid.z

    def active_values(self):
        return self.values[self.grid.mask()]

    def sup_norm(self):
        return float(np.max(np.linalg.norm(self.active_values(), axis=-1)))

    def ghosted(self):
        return fill_ghosts(self.values, self.grid.J)

    def level_slice(self, k) -> Field2D:
        """Level ``k`` as a full symmetric strip field (requires ``J_k >= 1``)."""
        Jk = int(self.grid.J[k])
        if Jk < 1:
            raise ValueError("level has no strip width")
        return Field2D.from_quarter(self.grid.X, Jk * self.grid.hy, self.values[:, :Jk + 1, k], "neumann")

    def __call__(self, pts):
        """Trilinear interpolation at points ``(x, y, z)`` of the prism (any signs of x and y)."""
        pts = check_array(pts, ensure_min_features=3)
        return interpolate_prism(self.grid, self.ghosted(), pts[:, 0], pts[:, 1], pts[:, 2])


def interpolate_prism(grid: PrismGrid, ghosted, x, y, z):
    """Trilinear interpolation of a ghost-filled quarter box, extended by the slice symmetries."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    sx = np.where(x < 0, -1.0, 1.0)
    sy = np.where(y < 0, -1.0, 1.0)
    fx = np.clip(np.abs(x) / grid.hx, 0.0, grid.Nx)
    fy = np.clip(np.abs(y) / grid.hy, 0.0, grid.Jmax)
    fz = np.clip(z / grid.hz, 0.0, grid.Nz)
    i = np.minimum(np.floor(fx).astype(int), grid.Nx - 1)
    j = np.minimum(np.floor(fy).astype(int), max(grid.Jmax - 1, 0))
    k = np.minimum(np.floor(fz).astype(int), grid.Nz - 1)
    tx = (fx - i)[:, None]
    ty = (fy - j)[:, None] if grid.Jmax > 0 else np.zeros((len(fy), 1))
    tz = (fz - k)[:, None]
    j1 = np.minimum(j + 1, grid.Jmax)
    G = ghosted
    out = np.zeros((len(x), 2))
    for di, wi in ((0, 1 - tx), (1, tx)):
        for jj, wj in ((j, 1 - ty), (j1, ty)):
            for dk, wk in ((0, 1 - tz), (1, tz)):
                out += wi * wj * wk * G[i + di, jj, k + dk]
    out[:, 0] *= sx
    out[:, 1] *= sy
    return out


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------
def renormaliser(table: M2LTable, widths, tol=1e-9):
    """Strip level of every discrete half-width; exact table entries where available."""
    out = np.zeros(len(widths))
    for k, L in enumerate(widths):
        if L <= 0:
            continue
        hit = np.abs(table.Ls - L) <= tol
        out[k] = table.values[np.argmax(hit)] if np.any(hit) else float(table.at(L))
    return out


def check_table_coverage(table: M2LTable, grid: PrismGrid):
    """Refuse tables that would need extension far beyond their sampled range."""
    top = grid.widths.max()
    if top > 2.0 * table.Ls[-1] + 1e-12 and not np.isfinite(table.fit.rate):
        raise ValueError("strip table does not cover the prism widths")


def prism_energy(p: PotentialSpec, level: Level1D, table: M2LTable, grid: PrismGrid, cap=None, base=None,
                 neumann_cap=False) -> LatticeEnergy:
    """Reduced doubly renormalised energy on the quarter prism box.

    ``cap`` holds the quarter-plane values (at least ``Jmax + 1`` rows in y)
    imposed on the level ``z = Z``; with ``neumann_cap`` the top level is
    left free instead.
    """
    level.check_grid(grid.X, 2 * grid.Nx + 1)
    check_table_coverage(table, grid)
    Nx, Nz, Jmax = grid.Nx, grid.Nz, grid.Jmax
    J = grid.J
    wx = folded_weights(Nx, grid.hx)
    wz = trapezoid_weights(Nz + 1, grid.hz)
    WY = grid.level_weights()
    node = wx[:, None, None] * WY[None, :, :] * wz[None, None, :]
    ex = np.broadcast_to((WY * wz[None, :] / grid.hx)[None], (Nx, Jmax + 1, Nz + 1))
    jj = np.arange(Jmax)
    ymask = (jj[:, None] + 1 <= J[None, :]).astype(float)
    ey = wx[:, None, None] * (ymask * wz[None, :] / grid.hy)[None]
    zmask = (np.arange(Jmax + 1)[:, None] <= J[None, :-1]).astype(float)
    ez = wx[:, None, None] * (0.5 * zmask * WY[:, 1:] / grid.hz)[None]
    free = np.repeat(grid.mask()[..., None], 2, axis=-1)
    free[0, :, :, 0] = False
    free[:, 0, :, 1] = False
    free[Nx] = False
    if base is None:
        base = np.zeros(grid.shape + (2,))
    base = np.array(base, dtype=float, copy=True)
    base[Nx] = p.wells[1]
    base[0, :, :, 0] = 0.0
    base[:, 0, :, 1] = 0.0
    if not neumann_cap:
        if cap is None:
            raise ValueError("a cap field is required for the Dirichlet top")
        cap = np.asarray(cap, dtype=float)
        if cap.shape[0] != Nx + 1 or cap.shape[1] < Jmax + 1:
            raise ValueError("cap field does not cover the top level of the prism")
        free[:, :, Nz] = False
        base[:, :, Nz] = cap[:, :Jmax + 1]
    base = fill_ghosts(base, J)
    m2z = renormaliser(table, grid.widths)
    const = -float(np.sum(wz * (level.value * 2.0 * grid.widths + m2z)))
    E = LatticeEnergy(p, node, [ex, ey, ez], free, base, constant=const)
    E.m2z = m2z
    return E


def _energy_for(p, level, table, u: Field3D, neumann_cap=False):
    return prism_energy(p, level, table, u.grid, cap=u.values[:, :, -1], base=u.values,
                        neumann_cap=neumann_cap)


def phi3(p: PotentialSpec, level: Level1D, table: M2LTable, u: Field3D) -> float:
    """Doubly renormalised energy of a prism field (trapezoid in z)."""
    E = _energy_for(p, level, table, u)
    return E.energy_field(E.unpack(E.pack(u.values)))


def grad_phi3(p: PotentialSpec, level: Level1D, table: M2LTable, u: Field3D, neumann_cap=False):
    """Gradient with respect to the free active nodes of the quarter prism."""
    E = _energy_for(p, level, table, u, neumann_cap)
    _, g = E(E.pack(u.values))
    return g


def slice_gaps(p: PotentialSpec, level: Level1D, table: M2LTable, u: Field3D):
    """Per level: discrete strip energy of the slice minus its strip level."""
    from .strip2d import strip_energy

    g = u.grid
    m2z = renormaliser(table, g.widths)
    out = np.zeros(g.Nz + 1)
    for k, Jk in enumerate(g.J):
        if Jk < 1:
            continue
        Q = u.values[:, :Jk + 1, k]
        E = strip_energy(p, level, g.X, g.hx, Jk * g.hy, g.hy, "neumann", base=Q)
        out[k] = E.energy(E.pack(Q)) - m2z[k]
    return out


def gradient_norm2_below(u: Field3D, r) -> float:
    """``||grad u||^2`` over the part of the prism below height ``r`` (full, unfolded domain)."""
    g = u.grid
    kmax = min(int(np.floor(r / g.hz + 1e-9)), g.Nz)
    wx = folded_weights(g.Nx, g.hx)
    WY = g.level_weights()
    wz = trapezoid_weights(kmax + 1, g.hz)
    U = u.values
    tot = 0.0
    J = g.J
    for k in range(kmax + 1):
        Jk = int(J[k])
        Uk = U[:, :Jk + 1, k]
        dx = np.sum(np.diff(Uk, axis=0) ** 2, axis=-1) / g.hx
        tot += wz[k] * float(np.sum(dx * WY[None, :Jk + 1, k]))
        if Jk >= 1:
            dy = np.sum(np.diff(Uk, axis=1) ** 2, axis=-1) / g.hy
            tot += wz[k] * float(wx @ dy.sum(axis=1))
        if k < kmax:
            dz = np.sum((U[:, :Jk + 1, k + 1] - Uk) ** 2, axis=-1) / g.hz
            tot += float(np.sum(wx[:, None] * WY[None, :Jk + 1, k + 1] * dz))
    return tot


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------
def prism_table(p: PotentialSpec, level: Level1D, q: Profile1D, grid: PrismGrid, scalar_energy: float,
                opts=None, progress=None) -> M2LTable:
    """Strip levels at every discrete half-width used by the prism, on the prism's own grid."""
    Ls = np.arange(1, grid.Jmax + 1) * grid.hy
    return m2l_table(p, level, Ls, q, scalar_energy, hy=grid.hy, opts=opts, keep_fields=False,
                     progress=progress)


def initial_prism(grid: PrismGrid, vq: Field2D) -> np.ndarray:
    """The planar heteroclinic-type field, constant in z and masked to the prism."""
    Q = vq.quarter
    if Q.shape[0] != grid.Nx + 1 or Q.shape[1] < grid.Jmax + 1:
        raise ValueError("planar field does not cover the prism cross-section")
    if abs(vq.hx - grid.hx) > 1e-12 or abs(vq.hy - grid.hy) > 1e-12:
        raise ValueError("planar field lives on a different grid")
    U = np.repeat(Q[:, :grid.Jmax + 1, None, :], grid.Nz + 1, axis=2)
    return fill_ghosts(U, grid.J)


def _amg_preconditioner(E: LatticeEnergy, shift=1.0):
    import pyamg

    K = E.hessian(np.zeros(E.size), potential_part=False)
    A = (K + shift * sp.diags(E.mass())).tocsr()
    # pyamg draws start vectors for its spectral radius estimates from the global RNG
    state = np.random.get_state()
    np.random.seed(0)
    try:
        ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric", max_coarse=500)
    finally:
        np.random.set_state(state)
    M = ml.aspreconditioner(cycle="V")
    return lambda v: M @ v


@dataclass
class PrismSolution:
    field: Field3D
    energy: float
    grad_norm: float
    n_iter: int
    converged: bool
    trace: list = field(default_factory=list, repr=False)


def solve_prism(p: PotentialSpec, grid: PrismGrid, level: Level1D, table: M2LTable, vq: Field2D, opts=None,
                init=None, neumann_cap=False, precondition="amg", callback=None) -> PrismSolution:
    """Minimise the prism energy from the z-constant planar field (or ``init``)."""
    opts = opts or MinimizeOptions(grad_tol=1e-8)
    U0 = initial_prism(grid, vq) if init is None else fill_ghosts(init, grid.J)
    E = prism_energy(p, level, table, grid, cap=vq.quarter, base=U0, neumann_cap=neumann_cap)
    pre = _amg_preconditioner(E) if precondition == "amg" else None
    R = p.radius

    def project(z):
        U = E.unpack(z)
        if np.max(np.linalg.norm(U, axis=-1)) <= R:
            return None
        return E.pack(radial_truncation(U, R))

    try:
        res = minimize(E, E.pack(U0), options=opts, precondition=pre, project=project, callback=callback)
    except StallError as exc:
        res = exc.result
        logger.warning("prism descent stalled at |g| = %.3e", res.grad_norm)
    if not np.isfinite(res.fun):
        raise SolverFailure("prism energy is not finite")
    U = fill_ghosts(E.unpack(res.x), grid.J)
    return PrismSolution(Field3D(grid, U), float(res.fun), float(res.grad_norm), res.n_iter,
                         bool(res.converged), res.trace)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------
@dataclass
class SliceReport:
    z: np.ndarray
    l2: np.ndarray
    sup: np.ndarray
    gap: np.ndarray


def slice_diagnostics(p, level, table, u: Field3D, vq: Field2D) -> SliceReport:
    """Distance of every level to the planar field restricted to it, and the slice energy gaps."""
    g = u.grid
    wx = folded_weights(g.Nx, g.hx)
    WY = g.level_weights()
    Q = vq.quarter
    l2 = np.zeros(g.Nz + 1)
    sup = np.zeros(g.Nz + 1)
    for k, Jk in enumerate(g.J):
        D = u.values[:, :Jk + 1, k] - Q[:, :Jk + 1]
        d2 = np.sum(D ** 2, axis=-1)
        l2[k] = np.sqrt(float(np.sum(wx[:, None] * WY[None, :Jk + 1, k] * d2)))
        sup[k] = float(np.sqrt(d2.max()))
    return SliceReport(g.z.copy(), l2, sup, slice_gaps(p, level, table, u))


@dataclass
class FarField:
    xs: np.ndarray
    maxdev: np.ndarray
    rate: float
    clamp_exact: bool


def check_far_field(u: Field3D, fractions=(0.6, 0.8)) -> FarField:
    """Largest deviation from the right well on planes x = const and its exponential rate."""
    g = u.grid
    m = g.mask()
    a_plus = np.array([1.0, 0.0])
    xs, dev = [], []
    for f in fractions:
        i = int(round(f * g.Nx))
        d = np.linalg.norm(u.values[i] - a_plus, axis=-1)[m[i]]
        xs.append(i * g.hx)
        dev.append(float(d.max()))
    xs = np.array(xs)
    dev = np.array(dev)
    A = np.stack([np.ones_like(xs), xs], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(np.maximum(dev, 1e-300)), rcond=None)
    clamp = bool(np.all(u.values[g.Nx][m[g.Nx]] == a_plus))
    return FarField(xs, dev, float(-coef[1]), clamp)


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------
class PrismSolver(BaseEstimator):
    """Minimiser of the prism energy; :meth:`predict` interpolates it at ``(x, y, z)`` points."""

    def __init__(self, family="abg", alpha=2.0, gamma=0.3, coeffs=(), j=2, X=8.0, Z=12.0, hx=0.1, hy=0.15,
                 hz=0.15, grad_tol=1e-8, max_iter=20000, memory=12, precondition="amg"):
        self.family = family
        self.alpha = alpha
        self.gamma = gamma
        self.coeffs = coeffs
        self.j = j
        self.X = X
        self.Z = Z
        self.hx = hx
        self.hy = hy
        self.hz = hz
        self.grad_tol = grad_tol
        self.max_iter = max_iter
        self.memory = memory
        self.precondition = precondition

    def fit(self, X=None, y=None, level=None, table=None, planar=None):
        if level is None or table is None or planar is None:
            raise ValueError("level, table and planar field are required")
        p = make_potential(self.family, self.alpha, self.gamma, tuple(self.coeffs))
        grid = PrismGrid(self.j, self.X, self.Z, self.hx, self.hy, self.hz)
        opts = MinimizeOptions(max_iter=self.max_iter, grad_tol=self.grad_tol, memory=self.memory)
        sol = solve_prism(p, grid, level, table, planar, opts, precondition=self.precondition)
        self.solution_ = sol
        self.field_ = sol.field
        self.energy_ = sol.energy
        return self

    def predict(self, points):
        check_is_fitted(self, "field_")
        return self.field_(points)
