"""Two-dimensional layered solutions: the Neumann strip and the heteroclinic-type problem.

Fields are stored on the full grid ``[-X, X] x [-L, L]`` but every solver
works on the quarter ``[0, X] x [0, L]``: the first component is odd in x,
the second is odd in y, so ``v1 = 0`` on ``x = 0`` and ``v2 = 0`` on
``y = 0`` are pinned. The energy renormalises each x-slice by the discrete
minimal action, which must come from the same x-grid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .lattice import LatticeEnergy, folded_weights, newton_polish, radial_truncation
from .one_dim import FitError, Level1D, Profile1D, SolverFailure, l2_distance
from .optimize import MinimizeOptions, StallError, minimize
from .potential import PotentialSpec, make_potential

logger = logging.getLogger(__name__)

SIGN_X = np.array([-1.0, 1.0])
SIGN_Y = np.array([1.0, -1.0])


class TableError(RuntimeError):
    """The computed table of strip levels violates monotonicity."""


def _grid_count(length, h, what):
    n = int(round(length / h))
    if n < 1 or abs(n * h - length) > 1e-9 * max(1.0, length):
        raise ValueError(f"{what} = {length} is not a positive multiple of the spacing {h}")
    return n


@dataclass
class Field2D:
    X: float
    L: float
    values: np.ndarray
    bc: str = "neumann"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[2] != 2:
            raise ValueError("field values must have shape (nx, ny, 2)")
        nx, ny = self.values.shape[:2]
        if nx % 2 == 0 or ny % 2 == 0 or nx < 3 or ny < 3:
            raise ValueError("node counts must be odd and at least 3")
        if self.bc not in ("neumann", "dirichlet"):
            raise ValueError("bc must be 'neumann' or 'dirichlet'")

    @property
    def nx(self):
        return self.values.shape[0]

    @property
    def ny(self):
        return self.values.shape[1]

    @property
    def hx(self):
        return 2.0 * self.X / (self.nx - 1)

    @property
    def hy(self):
        return 2.0 * self.L / (self.ny - 1)

    @property
    def x(self):
        return np.linspace(-self.X, self.X, self.nx)

    @property
    def y(self):
        return np.linspace(-self.L, self.L, self.ny)

    @property
    def quarter(self):
        return self.values[(self.nx - 1) // 2:, (self.ny - 1) // 2:]

    @classmethod
    def from_quarter(cls, X, L, quarter, bc="neumann"):
        Q = np.asarray(quarter, dtype=float)
        right = np.concatenate([Q[:, :0:-1] * SIGN_Y, Q], axis=1)
        full = np.concatenate([right[:0:-1] * SIGN_X, right], axis=0)
        return cls(X, L, full, bc)

    @classmethod
    def y_constant(cls, q: Profile1D, L, hy, bc="neumann"):
        """Extension of a profile that is constant in y (not symmetric unless q is scalar)."""
        Ny = _grid_count(L, hy, "L")
        return cls(q.X, L, np.repeat(q.values[:, None, :], 2 * Ny + 1, axis=1), bc)

    def slice(self, y_index) -> Profile1D:
        return Profile1D(self.X, self.values[:, y_index])

    def symmetry_defect(self):
        v = self.values
        dx = np.max(np.abs(v[::-1] * SIGN_X - v))
        dy = np.max(np.abs(v[:, ::-1] * SIGN_Y - v))
        return float(max(dx, dy))

    def sup_norm(self):
        return float(np.max(np.linalg.norm(self.values, axis=-1)))

    def __call__(self, pts):
        """Bilinear interpolation at points ``(x, y)`` inside the rectangle."""
        pts = check_array(pts, ensure_min_features=2)
        return bilinear(self.values, -self.X, -self.L, self.hx, self.hy, pts[:, 0], pts[:, 1])


def bilinear(values, x0, y0, hx, hy, x, y):
    nx, ny = values.shape[:2]
    fx = np.clip((np.asarray(x) - x0) / hx, 0.0, nx - 1.0)
    fy = np.clip((np.asarray(y) - y0) / hy, 0.0, ny - 1.0)
    i = np.minimum(np.floor(fx).astype(int), nx - 2)
    j = np.minimum(np.floor(fy).astype(int), ny - 2)
    tx = (fx - i)[..., None]
    ty = (fy - j)[..., None]
    return ((1 - tx) * (1 - ty) * values[i, j] + tx * (1 - ty) * values[i + 1, j]
            + (1 - tx) * ty * values[i, j + 1] + tx * ty * values[i + 1, j + 1])


# ---------------------------------------------------------------------------
# energies
# ---------------------------------------------------------------------------
def strip_energy(p: PotentialSpec, level: Level1D, X, hx, L, hy, bc="neumann", cap=None, base=None):
    """Reduced renormalised energy on the quarter ``[0, X] x [0, L]``.

    ``bc="dirichlet"`` pins the row ``y = L`` to ``cap`` (half-line values of
    a profile); otherwise the row is free, which realises the Neumann
    condition through the trapezoid end weight.
    """
    Nx = _grid_count(X, hx, "X")
    Ny = _grid_count(L, hy, "L")
    level.check_grid(X, 2 * Nx + 1)
    wx = folded_weights(Nx, hx)
    wy = folded_weights(Ny, hy)
    node = wx[:, None] * wy[None, :]
    ex = np.broadcast_to((wy / hx)[None, :], (Nx, Ny + 1))
    ey = np.broadcast_to((wx / hy)[:, None], (Nx + 1, Ny))
    free = np.ones((Nx + 1, Ny + 1, 2), dtype=bool)
    free[0, :, 0] = False
    free[:, 0, 1] = False
    free[Nx, :, :] = False
    if base is None:
        base = np.zeros((Nx + 1, Ny + 1, 2))
    base = np.array(base, dtype=float, copy=True)
    base[Nx, :] = p.wells[1]
    base[0, :, 0] = 0.0
    base[:, 0, 1] = 0.0
    if bc == "dirichlet":
        if cap is None:
            raise ValueError("a Dirichlet cap profile is required")
        free[:, Ny, :] = False
        base[:, Ny] = cap
    elif bc != "neumann":
        raise ValueError("bc must be 'neumann' or 'dirichlet'")
    return LatticeEnergy(p, node, [ex, ey], free, base, constant=-level.value * 2.0 * L)


def _full_weights(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def slice_actions(p: PotentialSpec, v: Field2D):
    """Discrete action of every x-slice ``v(., y_j)``."""
    wx = _full_weights(v.nx, v.hx)
    kin = 0.5 * np.sum(np.diff(v.values, axis=0) ** 2, axis=(0, 2)) / v.hx
    return kin + wx @ p.value(v.values)


def dy_norm2(v: Field2D, rows=None):
    """``||d_y v||^2`` over the strip (or between row indices ``rows = (j0, j1)``)."""
    wx = _full_weights(v.nx, v.hx)
    d = np.diff(v.values, axis=1)
    if rows is not None:
        d = d[:, rows[0]:rows[1]]
    return float(wx @ np.sum(d ** 2, axis=(1, 2))) / v.hy


def phi2L(p: PotentialSpec, level: Level1D, v: Field2D, rows=None):
    """Renormalised strip energy by trapezoid quadrature in y.

    ``rows = (j0, j1)`` restricts the y-integral to ``[y_j0, y_j1]``.
    """
    level.check_grid(v.X, v.nx)
    s = slice_actions(p, v) - level.value
    j0, j1 = (0, v.ny - 1) if rows is None else rows
    wy = _full_weights(j1 - j0 + 1, v.hy)
    return 0.5 * dy_norm2(v, (j0, j1)) + float(wy @ s[j0:j1 + 1])


def _energy_for(p, level, v: Field2D, cap=None):
    Nx = (v.nx - 1) // 2
    Ny = (v.ny - 1) // 2
    hx, hy = v.hx, v.hy
    if v.bc == "dirichlet" and cap is None:
        cap = v.quarter[:, -1]
    return strip_energy(p, level, Nx * hx, hx, Ny * hy, hy, v.bc, cap=cap, base=v.quarter)


def grad_phi2L(p: PotentialSpec, level: Level1D, v: Field2D):
    """Gradient of the reduced discrete energy with respect to the free quarter nodes."""
    E = _energy_for(p, level, v)
    _, g = E(E.pack(v.quarter))
    return g


def el_residual(p: PotentialSpec, v: Field2D):
    """Sup norm of ``-Lap_h v + grad W(v)`` over interior nodes."""
    V = v.values
    lap = ((V[2:, 1:-1] - 2 * V[1:-1, 1:-1] + V[:-2, 1:-1]) / v.hx ** 2
           + (V[1:-1, 2:] - 2 * V[1:-1, 1:-1] + V[1:-1, :-2]) / v.hy ** 2)
    r = -lap + p.grad(V[1:-1, 1:-1])
    return float(np.max(np.abs(r)))


def truncate_R(v: Field2D, R) -> Field2D:
    """Radial clamp of the field values onto the ball of radius ``R``."""
    return Field2D(v.X, v.L, radial_truncation(v.values, R), v.bc)


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------
def _projector(E: LatticeEnergy, R):
    def project(z):
        U = E.unpack(z)
        if np.max(np.linalg.norm(U, axis=-1)) <= R:
            return None
        return E.pack(radial_truncation(U, R))
    return project


def _descend(E: LatticeEnergy, z0, opts, R, polish=True):
    precond = E.laplace_preconditioner(shift=1.0)
    try:
        res = minimize(E, z0, options=opts, precondition=precond, project=_projector(E, R))
        z = res.x
    except StallError as exc:
        z = exc.result.x
    if polish:
        z, f, gn = newton_polish(E, z, grad_tol=min(opts.grad_tol, 1e-11))
    else:
        f, g = E(z)
        gn = float(np.linalg.norm(g))
    return z, float(f), gn


def strip_initial(q: Profile1D, L, hy, shape="sin"):
    """Quarter-domain initial field interpolating from a scalar slice at y = 0 to ``q`` at y = L."""
    Ny = _grid_count(L, hy, "L")
    y = np.arange(Ny + 1) * hy
    qh = q.half
    Q = np.repeat(qh[:, None, :], Ny + 1, axis=1).copy()
    prof = np.sin(0.5 * np.pi * y / L) if shape == "sin" else np.tanh(y)
    Q[:, :, 1] = qh[:, None, 1] * prof[None, :]
    return Q


def stretch_quarter(Q, L_old, L_new, hy):
    """Warm start for a wider strip: rescale the y-coordinate of a quarter field."""
    Ny_new = _grid_count(L_new, hy, "L")
    Ny_old = Q.shape[1] - 1
    y_new = np.arange(Ny_new + 1) * hy * (L_old / L_new)
    y_old = np.arange(Ny_old + 1) * hy
    out = np.empty((Q.shape[0], Ny_new + 1, 2))
    for c in range(2):
        for i in range(Q.shape[0]):
            out[i, :, c] = np.interp(y_new, y_old, Q[i, :, c])
    return out


@dataclass
class StripSolution:
    field: Field2D
    energy: float
    grad_norm: float


def solve_PL2(p: PotentialSpec, level: Level1D, L, q: Profile1D, hy=None, opts=None, init=None,
              cold=True) -> StripSolution:
    """Minimal renormalised energy on the Neumann strip of half-width ``L``.

    ``q`` is the nonscalar minimal profile (same x-grid as ``level``); it
    shapes the cold start. ``init`` is an optional quarter-domain warm
    start; with ``cold=True`` the cold start is also tried and the lower
    energy is kept.
    """
    opts = opts or MinimizeOptions()
    hx = q.h
    hy = hx if hy is None else hy
    X = q.X
    starts = []
    if init is not None:
        init = np.array(init, dtype=float)
        if np.max(np.abs(init[:, :, 1])) < 1e-8:
            # a scalar start never leaves the invariant subspace v2 = 0
            init[:, :, 1] += 1e-3 * strip_initial(q, L, hy)[:, :, 1]
        starts.append(("warm", init))
    if cold or init is None:
        starts.append(("cold", strip_initial(q, L, hy)))
        # near-scalar start: on thin strips the interpolating start can sit in a worse basin
        S = strip_initial(q, L, hy)
        S[:, :, 1] *= 1e-3
        starts.append(("scalar", S))
    best = None
    for name, Q in starts:
        E = strip_energy(p, level, X, hx, L, hy, "neumann", base=Q)
        z, f, gn = _descend(E, E.pack(Q), opts, p.radius)
        logger.debug("strip L=%g %s start: energy %.12g |g| %.2e", L, name, f, gn)
        if best is None or f < best[1] - 1e-12:
            best = (E.unpack(z), f, gn)
    Q, f, gn = best
    if gn > max(10.0 * opts.grad_tol, 1e-8):
        raise SolverFailure(f"strip solve at L={L} did not converge (|g|={gn:.2e})")
    return StripSolution(Field2D.from_quarter(X, L, Q, "neumann"), f, gn)


def solve_hetero2d(p: PotentialSpec, level: Level1D, q: Profile1D, Y, hy=None, opts=None,
                   init=None) -> StripSolution:
    """Truncated heteroclinic-type problem on ``[-X, X] x [-Y, Y]``.

    Rows ``y = Y`` and ``y = -Y`` are clamped to ``q`` and its bar image.
    """
    if np.max(np.abs(q.values[:, 1])) < 1e-8:
        raise ValueError("the heteroclinic-type problem needs a nonscalar profile")
    opts = opts or MinimizeOptions()
    hx = q.h
    hy = hx if hy is None else hy
    Q0 = strip_initial(q, Y, hy, shape="tanh") if init is None else np.array(init, dtype=float)
    E = strip_energy(p, level, q.X, hx, Y, hy, "dirichlet", cap=q.half, base=Q0)
    z, f, gn = _descend(E, E.pack(Q0), opts, p.radius)
    if gn > max(10.0 * opts.grad_tol, 1e-8):
        raise SolverFailure(f"heteroclinic-type solve did not converge (|g|={gn:.2e})")
    return StripSolution(Field2D.from_quarter(q.X, Y, E.unpack(z), "dirichlet"), f, gn)


def extend_quarter(Q, Ny_new, cap):
    """Pad a quarter field in y with copies of ``cap`` up to ``Ny_new`` rows."""
    extra = Ny_new + 1 - Q.shape[1]
    if extra < 0:
        return Q[:, :Ny_new + 1].copy()
    return np.concatenate([Q, np.repeat(cap[:, None, :], extra, axis=1)], axis=1)


# ---------------------------------------------------------------------------
# table of strip levels
# ---------------------------------------------------------------------------
@dataclass
class GapFit:
    m2: float
    rate: float
    prefactor: float
    slope: float
    r_squared: float
    n_iter: int


def fit_gap(Ls, values, n_fit=None, max_iter=500, tol=1e-15) -> GapFit:
    """Fixed-point exponential extrapolation of an increasing saturating sequence.

    Fits ``log(m2 - m(L)) = log C - r L`` on the upper part of the table and
    updates ``m2 = m(Lmax) + C exp(-r Lmax)`` until it stops moving.
    """
    Ls = np.asarray(Ls, dtype=float)
    vals = np.asarray(values, dtype=float)
    if n_fit is None:
        n_fit = max(3, (len(Ls) + 1) // 2)
    if len(Ls) < 3:
        raise FitError("at least three table entries are needed for the gap fit")
    sel = slice(len(Ls) - n_fit, len(Ls))
    xs, ms = Ls[sel], vals[sel]
    if not np.all(np.diff(ms) > 0):
        raise FitError("upper part of the table is not strictly increasing")
    m_top = ms[-1]
    # start from a geometric estimate using the last three entries
    d1, d2 = ms[-2] - ms[-3], ms[-1] - ms[-2]
    m2 = m_top + d2 * (d2 / max(d1 - d2, 1e-300)) if d1 > d2 else m_top + d2
    A = np.stack([np.ones_like(xs), xs], axis=1)
    it = 0
    coef = None
    for it in range(1, max_iter + 1):
        gap = m2 - ms
        if np.any(gap <= 0):
            m2 = m_top + 2 * (ms[-1] - ms[-2])
            continue
        coef, *_ = np.linalg.lstsq(A, np.log(gap), rcond=None)
        new = m_top + np.exp(coef[0] + coef[1] * xs[-1])
        if abs(new - m2) <= tol * max(1.0, abs(m2)):
            m2 = new
            break
        m2 = new
    gap = m2 - ms
    ys = np.log(np.maximum(gap, 1e-300))
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    resid = ys - A @ coef
    ss = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    return GapFit(m2=float(m2), rate=float(-coef[1]), prefactor=float(np.exp(coef[0])), slope=float(coef[1]),
                  r_squared=r2, n_iter=it)


@dataclass
class M2LTable:
    Ls: np.ndarray
    values: np.ndarray
    fit: GapFit
    scalar_gap: float
    hx: float
    hy: float
    X: float
    fields: list = field(default_factory=list, repr=False)

    @property
    def m2(self) -> float:
        return self.fit.m2

    def monotone_defect(self) -> float:
        """Largest decrease between consecutive entries (0 if non-decreasing)."""
        return float(max(0.0, -np.min(np.diff(self.values)))) if len(self.values) > 1 else 0.0

    def at(self, L):
        """Interpolated strip level.

        Exact at table nodes, linear in between, exponential fit above the
        largest width, and below the smallest width the smaller of the
        linear ramp from ``m(0) = 0`` and the scalar competitor bound.
        """
        L = np.asarray(L, dtype=float)
        out = np.interp(L, self.Ls, self.values)
        hi = L > self.Ls[-1]
        out = np.where(hi, self.m2 - self.fit.prefactor * np.exp(-self.fit.rate * L), out)
        lo = L < self.Ls[0]
        ramp = self.values[0] * L / self.Ls[0]
        out = np.where(lo, np.minimum(ramp, 2.0 * L * self.scalar_gap), out)
        out = np.where(L <= 0, 0.0, out)
        return out if out.ndim else float(out)

    def lookup(self, L, tol=1e-9):
        """Exact table value at a node width; raises if ``L`` is not a node."""
        k = int(np.argmin(np.abs(self.Ls - L)))
        if abs(self.Ls[k] - L) > tol:
            raise KeyError(f"width {L} is not in the table")
        return float(self.values[k])

    def rows(self):
        m2 = self.m2
        for L, v in zip(self.Ls, self.values):
            yield (float(L), float(v), float(m2 - v), float(self.fit.prefactor * np.exp(-self.fit.rate * L)))


def m2l_table(p: PotentialSpec, level: Level1D, Ls, q: Profile1D, scalar_energy: float, hy=None, opts=None,
              warm=True, cold=True, mono_tol=1e-8, keep_fields=True, progress=None) -> M2LTable:
    """Strip levels over an ascending list of half-widths, warm-started along the list."""
    Ls = np.asarray(Ls, dtype=float)
    if len(Ls) == 0 or np.any(np.diff(Ls) <= 0):
        raise ValueError("half-widths must be a non-empty ascending list")
    hy = q.h if hy is None else hy
    vals, fields = [], []
    prev = None
    for L in Ls:
        init = stretch_quarter(prev.field.quarter, prev.field.L, L, hy) if (warm and prev is not None) else None
        sol = solve_PL2(p, level, L, q, hy, opts, init=init, cold=cold or init is None)
        vals.append(sol.energy)
        if keep_fields:
            fields.append(sol.field)
        prev = sol
        if progress is not None:
            progress(L, sol.energy)
        logger.info("m_2,L at L=%g: %.12f", L, sol.energy)
    vals = np.array(vals)
    defect = float(max(0.0, -np.min(np.diff(vals)))) if len(vals) > 1 else 0.0
    if defect > mono_tol:
        raise TableError(f"strip levels decrease by {defect:.3e} somewhere in the table")
    fit = fit_gap(Ls, vals) if len(Ls) >= 3 else GapFit(float(vals[-1]), float("nan"), 0.0, float("nan"),
                                                        float("nan"), 0)
    return M2LTable(Ls, vals, fit, scalar_energy - level.value, q.h, hy, q.X, fields)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------
@dataclass
class SliceDecay:
    y: np.ndarray
    l2: np.ndarray
    sup: np.ndarray
    rate: float
    prefactor: float
    r_squared: float
    window: tuple


def check_2d_decay(v: Field2D, q: Profile1D, floor=1e-9) -> SliceDecay:
    """Exponential fit of ``||v(., y) - q||`` in y over the saturated window.

    The window starts where the distance has dropped below half its value
    at y = 0 and ends a quarter of the way before the clamped row.
    """
    if v.nx != q.n:
        raise ValueError("profile and field live on different x-grids")
    j0 = (v.ny - 1) // 2
    ys = v.y[j0:]
    l2 = np.array([l2_distance(v.slice(j), q) for j in range(j0, v.ny)])
    sup = np.array([float(np.max(np.linalg.norm(v.values[:, j] - q.values, axis=-1))) for j in range(j0, v.ny)])
    start = np.argmax(l2 <= 0.5 * l2[0]) if np.any(l2 <= 0.5 * l2[0]) else len(l2)
    sel = np.zeros(len(ys), dtype=bool)
    sel[start:] = True
    sel &= (ys <= 0.75 * v.L) & (l2 >= floor)
    if np.count_nonzero(sel) < 3:
        raise FitError("slice decay window is empty")
    A = np.stack([np.ones(np.count_nonzero(sel)), ys[sel]], axis=1)
    lg = np.log(l2[sel])
    coef, *_ = np.linalg.lstsq(A, lg, rcond=None)
    resid = lg - A @ coef
    ss = float(np.sum((lg - lg.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    return SliceDecay(ys, l2, sup, float(-coef[1]), float(np.exp(coef[0])), r2,
                      (float(ys[sel][0]), float(ys[sel][-1])))


def midline_distance(v: Field2D, q: Profile1D):
    return l2_distance(v.slice((v.ny - 1) // 2), q)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------
class StripSolver(BaseEstimator):
    """Table of minimal renormalised strip energies.

    ``fit(level=..., profile=..., scalar_energy=...)`` needs the discrete
    minimal action, a nonscalar minimal profile on the same x-grid and the
    action of the scalar connection. :meth:`predict` interpolates the
    table at the requested half-widths.
    """

    def __init__(self, family="abg", alpha=2.0, gamma=0.3, coeffs=(), Ls=(0.5, 1, 2, 3, 4, 6, 8, 12), hy=None,
                 grad_tol=1e-8, max_iter=20000, memory=12):
        self.family = family
        self.alpha = alpha
        self.gamma = gamma
        self.coeffs = coeffs
        self.Ls = Ls
        self.hy = hy
        self.grad_tol = grad_tol
        self.max_iter = max_iter
        self.memory = memory

    def fit(self, X=None, y=None, level=None, profile=None, scalar_energy=None):
        if level is None or profile is None or scalar_energy is None:
            raise ValueError("level, profile and scalar_energy are required")
        p = make_potential(self.family, self.alpha, self.gamma, tuple(self.coeffs))
        opts = MinimizeOptions(max_iter=self.max_iter, grad_tol=self.grad_tol, memory=self.memory)
        self.table_ = m2l_table(p, level, list(self.Ls), profile, scalar_energy, self.hy, opts)
        self.m2_ = self.table_.m2
        return self

    def predict(self, L):
        check_is_fitted(self, "table_")
        L = check_array(np.atleast_1d(np.asarray(L, dtype=float)).reshape(-1, 1)).ravel()
        return self.table_.at(L)


class Heteroclinic2D(BaseEstimator):
    """Heteroclinic-type solution on a truncated strip; :meth:`predict` interpolates it at points."""

    def __init__(self, family="abg", alpha=2.0, gamma=0.3, coeffs=(), Y=8.0, hy=None, grad_tol=1e-8,
                 max_iter=20000, memory=12):
        self.family = family
        self.alpha = alpha
        self.gamma = gamma
        self.coeffs = coeffs
        self.Y = Y
        self.hy = hy
        self.grad_tol = grad_tol
        self.max_iter = max_iter
        self.memory = memory

    def fit(self, X=None, y=None, level=None, profile=None):
        if level is None or profile is None:
            raise ValueError("level and profile are required")
        p = make_potential(self.family, self.alpha, self.gamma, tuple(self.coeffs))
        opts = MinimizeOptions(max_iter=self.max_iter, grad_tol=self.grad_tol, memory=self.memory)
        sol = solve_hetero2d(p, level, profile, self.Y, self.hy, opts)
        self.field_ = sol.field
        self.energy_ = sol.energy
        self.decay_ = check_2d_decay(sol.field, profile)
        return self

    def predict(self, points):
        check_is_fitted(self, "field_")
        return self.field_(points)
