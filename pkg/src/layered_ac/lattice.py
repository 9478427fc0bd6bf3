"""Weighted lattice energies for maps into the plane.

Every discrete functional in the package has the form

    E(U) = sum_n a_n W(U_n) + sum_axis sum_edges b_e |U_head - U_tail|^2 + c

on a rectangular node array ``U`` of shape ``grid + (2,)``. Quadrature
weights, symmetry folding and masking are all encoded in the node weights
``a`` and the per-axis edge weights ``b``; boundary values are encoded by a
boolean ``free`` mask plus a ``base`` array that supplies the fixed values.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def folded_weights(n_half: int, h: float) -> np.ndarray:
    """Trapezoid weights of a grid symmetric about 0, folded onto ``[0, n_half*h]``.

    Node 0 keeps its own weight ``h``; every other node stands for itself and
    its mirror image.
    """
    if n_half == 0:
        return np.zeros(1)
    w = np.full(n_half + 1, 2.0 * h)
    w[0] = h
    w[-1] = h
    return w


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


class LatticeEnergy:
    def __init__(self, potential, node_weight, edge_weights, free, base, constant=0.0):
        self.potential = potential
        self.node_weight = np.asarray(node_weight, dtype=float)
        self.grid_shape = self.node_weight.shape
        self.edge_weights = [None if w is None else np.asarray(w, dtype=float) for w in edge_weights]
        if len(self.edge_weights) != len(self.grid_shape):
            raise ValueError("one edge-weight array per axis is required")
        self.free = np.asarray(free, dtype=bool)
        self.base = np.array(base, dtype=float, copy=True)
        if self.free.shape != self.grid_shape + (2,) or self.base.shape != self.free.shape:
            raise ValueError("free mask and base values must have shape grid + (2,)")
        self.constant = float(constant)
        self.size = int(self.free.sum())

    # -- packing -----------------------------------------------------------
    def pack(self, U):
        return np.asarray(U, dtype=float)[self.free]

    def unpack(self, z):
        U = self.base.copy()
        U[self.free] = z
        return U

    # -- energy ------------------------------------------------------------
    def _edge_terms(self, U, with_grad):
        total = 0.0
        G = np.zeros_like(U) if with_grad else None
        for axis, w in enumerate(self.edge_weights):
            if w is None:
                continue
            D = np.diff(U, axis=axis)
            wd = w[..., None] * D
            total += float(np.sum(wd * D))
            if with_grad:
                lo = [slice(None)] * U.ndim
                hi = [slice(None)] * U.ndim
                lo[axis] = slice(0, -1)
                hi[axis] = slice(1, None)
                G[tuple(lo)] -= 2.0 * wd
                G[tuple(hi)] += 2.0 * wd
        return total, G

    def energy_field(self, U):
        e_nodes = float(np.sum(self.node_weight * self.potential.value(U)))
        e_edges, _ = self._edge_terms(U, False)
        return e_nodes + e_edges + self.constant

    def energy_grad_field(self, U):
        e_edges, G = self._edge_terms(U, True)
        e_nodes = float(np.sum(self.node_weight * self.potential.value(U)))
        G += self.node_weight[..., None] * self.potential.grad(U)
        return e_nodes + e_edges + self.constant, G

    def __call__(self, z):
        """Objective in packed coordinates: ``(value, gradient)``."""
        f, G = self.energy_grad_field(self.unpack(z))
        return f, G[self.free]

    def energy(self, z):
        return self.energy_field(self.unpack(z))

    # -- second order --------------------------------------------------------
    def _index_map(self):
        idx = -np.ones(self.free.shape, dtype=np.int64)
        idx[self.free] = np.arange(self.size)
        return idx

    def hessian(self, z, node_weight_override=None, potential_part=True):
        """Sparse Hessian in packed coordinates."""
        U = self.unpack(z)
        idx = self._index_map()
        rows, cols, vals = [], [], []
        if potential_part:
            nw = self.node_weight if node_weight_override is None else node_weight_override
            H = nw[..., None, None] * self.potential.hess(U)
            for a in range(2):
                for b in range(2):
                    ia, ib = idx[..., a], idx[..., b]
                    ok = (ia >= 0) & (ib >= 0) & (nw != 0)
                    rows.append(ia[ok])
                    cols.append(ib[ok])
                    vals.append(H[..., a, b][ok])
        for axis, w in enumerate(self.edge_weights):
            if w is None:
                continue
            n = self.grid_shape[axis]
            lo = [slice(None)] * len(self.grid_shape)
            hi = [slice(None)] * len(self.grid_shape)
            lo[axis] = slice(0, n - 1)
            hi[axis] = slice(1, n)
            wb = np.broadcast_to(w, tuple(n - 1 if k == axis else s for k, s in enumerate(self.grid_shape)))
            for c in range(2):
                it = idx[tuple(lo) + (c,)]
                ih = idx[tuple(hi) + (c,)]
                ww = 2.0 * wb
                for a_idx, b_idx, sign in ((it, it, 1.0), (ih, ih, 1.0), (it, ih, -1.0), (ih, it, -1.0)):
                    ok = (a_idx >= 0) & (b_idx >= 0) & (ww != 0)
                    rows.append(a_idx[ok])
                    cols.append(b_idx[ok])
                    vals.append(sign * ww[ok])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.size, self.size))

    def mass(self):
        """Diagonal L2 mass of the free variables (node weight per component)."""
        nw = np.broadcast_to(self.node_weight[..., None], self.free.shape)
        return nw[self.free].copy()

    def laplace_preconditioner(self, shift=1.0):
        """Factorised ``(K + shift*M)^-1`` with K the edge (gradient) part."""
        K = self.hessian(np.zeros(self.size), potential_part=False)
        M = sp.diags(self.mass())
        lu = spla.splu((K + shift * M).tocsc())
        return lu.solve

    def max_norm(self, z):
        return float(np.max(np.linalg.norm(self.unpack(z), axis=-1)))


def radial_truncation(U, R):
    """Pointwise radial clamp of a field onto the closed ball of radius R."""
    if R <= 1.0:
        raise ValueError("truncation radius must exceed 1")
    U = np.asarray(U, dtype=float)
    r = np.linalg.norm(U, axis=-1, keepdims=True)
    # points already on the sphere up to rounding are left untouched, so the clamp is idempotent
    scale = np.where(r > R * (1 + 1e-12), R / np.where(r > 0, r, 1.0), 1.0)
    return U * scale


def newton_polish(energy: LatticeEnergy, z, max_steps=8, grad_tol=1e-13, logger=None):
    """A few damped Newton steps from a near-minimiser; stops if the Hessian is indefinite.

    Steps are accepted only when they lower the gradient norm without
    increasing the energy by more than rounding noise.
    """
    z = np.array(z, dtype=float, copy=True)
    f, g = energy(z)
    gn = float(np.linalg.norm(g))
    for _ in range(max_steps):
        if gn <= grad_tol:
            break
        H = energy.hessian(z).tocsc()
        try:
            dz = spla.spsolve(H, -g)
        except RuntimeError:
            break
        if not np.all(np.isfinite(dz)) or float(g @ dz) >= 0.0:
            break
        step = 1.0
        improved = False
        while step > 1e-4:
            z_new = z + step * dz
            f_new, g_new = energy(z_new)
            gn_new = float(np.linalg.norm(g_new))
            if gn_new < gn and f_new <= f + 1e-13 * max(1.0, abs(f)):
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        z, f, g, gn = z_new, f_new, g_new, gn_new
    if logger is not None:
        logger.debug("newton polish finished with |g| = %.3e", gn)
    return z, f, gn
