"""Entire-space solutions obtained by rotating and reflecting the prism solution.

The prism of half-opening ``pi/(2j)`` is centred on the +z axis of the
(y, z)-plane. The rotation ``A_j`` turns the (y, z)-plane by ``-pi/j``, so
its powers carry the prism onto ``2j`` sectors that tile space. In sector
``k`` the field is the prism field at the point rotated back into the
prism, reflected in y when ``k`` is odd.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .one_dim import Profile1D
from .prism3d import Field3D, interpolate_prism


class ExtensionError(ValueError):
    """A query point lies beyond the computed height of the prism."""


def rotation_matrix(j) -> np.ndarray:
    if int(j) != j or j < 2:
        raise ValueError("symmetry order j must be an integer >= 2")
    c, s = np.cos(np.pi / j), np.sin(np.pi / j)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def sector_index(y, z, j, tie_tol=1e-12):
    """Index ``k`` of the sector containing ``(y, z)``; ties go to the smaller index.

    The origin is assigned to sector 0.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    phi = np.arctan2(z, y)
    t = (0.5 * np.pi - phi) / (np.pi / j)
    lo = np.floor(t)
    frac = t - lo
    k = np.where(frac < 0.5, lo, lo + 1)
    tie = np.abs(frac - 0.5) <= tie_tol
    k = np.mod(k, 2 * j).astype(int)
    alt = np.mod(np.where(frac < 0.5, lo + 1, lo), 2 * j).astype(int)
    k = np.where(tie, np.minimum(k, alt), k)
    k = np.where((y == 0) & (z == 0), 0, k)
    return k if k.ndim else int(k)


def rotate_yz(y, z, angle):
    c, s = np.cos(angle), np.sin(angle)
    return c * y - s * z, s * y + c * z


def to_prism(x, y, z, j):
    """Map points into the prism: returns ``(x, y', z', k)``."""
    k = sector_index(y, z, j)
    # A_j^{-k} turns the (y, z)-plane by +k pi / j
    yr, zr = rotate_yz(np.asarray(y, dtype=float), np.asarray(z, dtype=float), np.asarray(k) * np.pi / j)
    yr = np.where(np.asarray(k) % 2 == 1, -yr, yr)
    return np.asarray(x, dtype=float), yr, zr, k


@dataclass
class ReflectionAssembly:
    j: int
    field: Field3D
    q: Profile1D
    clamp_z: bool = False

    def __post_init__(self):
        if self.field.grid.j != self.j:
            raise ValueError("prism field was computed for a different symmetry order")
        self.A = rotation_matrix(self.j)
        self._ghosted = self.field.ghosted()

    @property
    def qbar(self) -> Profile1D:
        return self.q.bar()

    @property
    def Z(self) -> float:
        return self.field.grid.Z

    def prism_value(self, x, y, z):
        g = self.field.grid
        z = np.asarray(z, dtype=float)
        if not self.clamp_z and np.any(z > g.Z + 1e-9):
            raise ExtensionError("query beyond the computed height of the prism")
        return interpolate_prism(g, self._ghosted, np.atleast_1d(x), np.atleast_1d(y), np.atleast_1d(z))


def evaluate_vj(asm: ReflectionAssembly, x, y, z):
    """Assembled field at points ``(x, y, z)``; arrays broadcast together."""
    x, y, z = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float),
                                  np.asarray(z, dtype=float))
    shape = x.shape
    xp, yp, zp, _ = to_prism(x.ravel(), y.ravel(), z.ravel(), asm.j)
    return asm.prism_value(xp, yp, zp).reshape(shape + (2,))


def evaluate_cylindrical(asm: ReflectionAssembly, x, rho, angle):
    """Field at cylindrical coordinates: ``(y, z) = rho (cos angle, sin angle)``."""
    return evaluate_vj(asm, x, rho * np.cos(angle), rho * np.sin(angle))


def mid_ray_angle(j, k):
    return 0.5 * np.pi + (np.pi / j) * (0.5 + k)


def interpolation_error_estimate(asm: ReflectionAssembly) -> float:
    """``max |second difference| / 8`` over the active prism nodes and the three axes."""
    G = asm._ghosted
    m = asm.field.grid.mask()
    est = 0.0
    for axis in range(3):
        d2 = np.abs(np.diff(G, n=2, axis=axis)).max(axis=-1)
        sl = [slice(None)] * 3
        sl[axis] = slice(1, -1)
        est = max(est, float(d2[m[tuple(sl)]].max()) / 8.0)
    return est


@dataclass
class AssemblyReport:
    periodicity: float
    face_jump: float
    interp_error: float
    rho: np.ndarray
    ray_distance: dict

    def lines(self):
        out = [f"periodicity residual {self.periodicity:.3e}",
               f"face jump {self.face_jump:.3e} (interpolation error estimate {self.interp_error:.3e})"]
        for k, d in self.ray_distance.items():
            out.append(f"mid-ray k={k}: " + " ".join(f"{r:.2f}:{v:.3e}" for r, v in zip(self.rho, d)))
        return out


def check_assembly(asm: ReflectionAssembly, n_samples=2000, rho_fracs=(0.3, 0.5, 0.8), eps=1e-6,
                   seed=0) -> AssemblyReport:
    """Rotational periodicity, continuity across sector faces and mid-ray limits.

    Mid-ray ``k`` is compared in sup norm over the x-grid with ``q`` for odd
    ``k`` and with its bar image for even ``k``.
    """
    rng = np.random.default_rng(seed)
    j = asm.j
    g = asm.field.grid
    X, Z = g.X, g.Z
    r_max = Z * np.cos(np.pi / (2 * j))
    x = rng.uniform(-X, X, n_samples)
    rho = rng.uniform(0.0, r_max, n_samples)
    ang = rng.uniform(0.0, 2 * np.pi, n_samples)
    v0 = evaluate_cylindrical(asm, x, rho, ang)
    v1 = evaluate_cylindrical(asm, x, rho, ang + 2 * np.pi / j)
    periodicity = float(np.max(np.abs(v1 - v0)))

    # faces sit at angles pi/2 + (pi/j)(1/2 + m); the unit normal is the angular direction
    m = rng.integers(0, 2 * j, n_samples)
    face = mid_ray_angle(j, m)
    rho_f = rng.uniform(0.05 * r_max, 0.95 * r_max, n_samples)
    y0, z0 = rho_f * np.cos(face), rho_f * np.sin(face)
    ny, nz = -np.sin(face), np.cos(face)
    plus = evaluate_vj(asm, x, y0 + eps * ny, z0 + eps * nz)
    minus = evaluate_vj(asm, x, y0 - eps * ny, z0 - eps * nz)
    face_jump = float(np.max(np.abs(plus - minus)))

    xs = np.linspace(-X, X, 2 * g.Nx + 1)
    if asm.q.n != len(xs):
        raise ValueError("profile and prism live on different x-grids")
    rhos = np.array(rho_fracs) * Z
    dist = {}
    for k in range(2 * j):
        target = asm.q.values if k % 2 == 1 else asm.qbar.values
        a = mid_ray_angle(j, k)
        row = []
        for r in rhos:
            vals = evaluate_cylindrical(asm, xs, r, a)
            row.append(float(np.max(np.linalg.norm(vals - target, axis=-1))))
        dist[k] = np.array(row)
    return AssemblyReport(periodicity, face_jump, interpolation_error_estimate(asm), rhos, dist)


def export_field3d(asm: ReflectionAssembly, path, box, resolution):
    """Write the assembled field on a box as a legacy ASCII structured-points file.

    ``box = ((x0, x1), (y0, y1), (z0, z1))``; ``resolution`` is a node count
    per axis (int or triple). Point data: v1, v2 and the distance to a+.
    """
    res = (resolution,) * 3 if np.isscalar(resolution) else tuple(resolution)
    if any(int(r) != r or r < 2 for r in res):
        raise ValueError("resolution must be at least 2 nodes per axis")
    res = tuple(int(r) for r in res)
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(box, res)]
    # VTK orders points with x varying fastest
    Zg, Yg, Xg = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    xp, yp, zp, _ = to_prism(Xg.ravel(), Yg.ravel(), Zg.ravel(), asm.j)
    if not asm.clamp_z and np.any(zp > asm.Z + 1e-9):
        raise ExtensionError("box reaches beyond the tiled prism height")
    V = asm.prism_value(xp, yp, zp)
    dist = np.linalg.norm(V - np.array([1.0, 0.0]), axis=-1)
    spacing = [(hi - lo) / (n - 1) for (lo, hi), n in zip(box, res)]
    lines = [
        "# vtk DataFile Version 3.0",
        f"assembled layered solution j={asm.j}",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {res[0]} {res[1]} {res[2]}",
        "ORIGIN " + " ".join(f"{b[0]:.10g}" for b in box),
        "SPACING " + " ".join(f"{s:.10g}" for s in spacing),
        f"POINT_DATA {V.shape[0]}",
    ]
    for name, data in (("v1", V[:, 0]), ("v2", V[:, 1]), ("dist_aplus", dist)):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(f"{v:.12e}" for v in data)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


class AssembledSolution(BaseEstimator):
    """Entire-space field built from a prism solution; :meth:`predict` evaluates it at points."""

    def __init__(self, j=2, clamp_z=False):
        self.j = j
        self.clamp_z = clamp_z

    def fit(self, X=None, y=None, field=None, profile=None):
        if field is None or profile is None:
            raise ValueError("prism field and profile are required")
        self.assembly_ = ReflectionAssembly(self.j, field, profile, self.clamp_z)
        return self

    def predict(self, points):
        check_is_fitted(self, "assembly_")
        pts = check_array(points, ensure_min_features=3)
        return evaluate_vj(self.assembly_, pts[:, 0], pts[:, 1], pts[:, 2])
