"""Descent and spectral machinery shared by the 1D, 2D and 3D solvers."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """The objective produced a non-finite value."""


class StallError(RuntimeError):
    """The line search could not decrease the objective.

    ``result`` holds the last accepted iterate.
    """

    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


class EigenConvergenceError(RuntimeError):
    pass


@dataclass
class MinimizeOptions:
    max_iter: int = 20000
    grad_tol: float = 1e-8
    memory: int = 12
    shrink: float = 0.5
    armijo: float = 1e-4
    min_step: float = 1e-20
    stall_window: int = 50

    def __post_init__(self):
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.memory < 1:
            raise ValueError("memory must be at least 1")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink factor must lie in (0, 1)")
        if self.stall_window < 1:
            raise ValueError("stall_window must be at least 1")


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    n_iter: int
    converged: bool
    trace: list = field(default_factory=list, repr=False)


def _evaluate(objective, x):
    f, g = objective(x)
    f = float(f)
    return f, np.asarray(g, dtype=float)


def minimize(objective, x0, options=None, precondition=None, project=None, callback=None):
    """Limited-memory quasi-Newton descent with backtracking.

    ``objective(x)`` returns ``(value, gradient)``. ``precondition(g)``, when
    given, applies a fixed symmetric positive definite approximation of the
    inverse Hessian and seeds the two-loop recursion. ``project(x)`` may
    return a modified iterate (or ``None`` for no change); it is applied after
    every accepted step and must not increase the objective. The memory is
    discarded whenever a projection fires.

    The run also stops (unconverged) once ``stall_window`` consecutive
    iterations fail to lower the objective at all; this happens when the
    remaining decrease is below floating-point resolution.
    """
    opts = options or MinimizeOptions()
    x = np.array(x0, dtype=float, copy=True)
    f, g = _evaluate(objective, x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise DivergenceError("objective is not finite at the starting point")
    trace = [f]
    hist = deque(maxlen=opts.memory)
    apply_h0 = precondition if precondition is not None else (lambda v: v)
    gamma = None
    n_iter = 0
    gnorm = float(np.linalg.norm(g))
    flat = 0

    def result(converged):
        return MinimizeResult(x=x, fun=f, grad_norm=gnorm, n_iter=n_iter, converged=converged, trace=trace)

    while n_iter < opts.max_iter:
        if gnorm <= opts.grad_tol:
            return result(True)
        d = -_two_loop(g, hist, apply_h0, gamma)
        gd = float(g @ d)
        if gd >= 0.0:
            hist.clear()
            gamma = None
            d = -apply_h0(g)
            gd = float(g @ d)
        if not hist and gamma is None:
            # first step: keep the trial move modest
            scale = min(1.0, 1.0 / max(np.sqrt(-gd), 1e-300))
        else:
            scale = 1.0
        accepted = False
        for attempt in range(2):
            step = scale
            while step >= opts.min_step:
                x_new = x + step * d
                f_new, g_new = _evaluate(objective, x_new)
                if np.isfinite(f_new) and f_new <= f + opts.armijo * step * gd:
                    accepted = True
                    break
                step *= opts.shrink
            if accepted or attempt == 1:
                break
            if not hist:
                break
            # retry once along the preconditioned steepest-descent direction
            hist.clear()
            gamma = None
            d = -apply_h0(g)
            gd = float(g @ d)
            scale = min(1.0, 1.0 / max(np.sqrt(-gd), 1e-300))
        if not accepted:
            if not np.isfinite(f_new) and step < opts.min_step:
                raise DivergenceError("objective became non-finite along every trial step")
            raise StallError(f"line search failed at iteration {n_iter} (|g|={gnorm:.3e})", result(False))
        if not np.all(np.isfinite(g_new)):
            raise DivergenceError("gradient became non-finite")
        s = x_new - x
        y = g_new - g
        x, f, g = x_new, f_new, g_new
        if project is not None:
            projected = project(x)
            if projected is not None:
                f_p, g_p = _evaluate(objective, projected)
                if f_p <= f:
                    x, f, g = projected, f_p, g_p
                    hist.clear()
                    gamma = None
                    s = None
        if s is not None:
            sy = float(s @ y)
            if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)) and sy > 0.0:
                hist.append((s, y, 1.0 / sy))
                hy = apply_h0(y)
                gamma = sy / float(y @ hy)
        flat = flat + 1 if f >= trace[-1] else 0
        trace.append(f)
        gnorm = float(np.linalg.norm(g))
        n_iter += 1
        if flat >= opts.stall_window and gnorm > opts.grad_tol:
            logger.debug("no decrease in %d iterations; stopping at |g| = %.3e", flat, gnorm)
            return result(False)
        if callback is not None:
            callback(x, f, gnorm)
    return result(gnorm <= opts.grad_tol)


def _two_loop(g, hist, apply_h0, gamma):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(hist):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    r = apply_h0(q)
    if gamma is not None:
        r = gamma * r
    for (s, y, rho), a in zip(hist, reversed(alphas)):
        b = rho * float(y @ r)
        r += (a - b) * s
    return r


def check_gradient(objective, x, h=1e-6, indices=None, order=2):
    """Largest relative mismatch between the analytic and a central-difference gradient.

    The relative error of component i is ``|g_i - fd_i| / (|g_i| + h)``.
    ``indices`` restricts the comparison to a subset of components. With
    ``order=4`` the five-point stencil is used; it is exact up to rounding for
    objectives that are quartic in each coordinate, so a wide step can be taken.
    """
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    x = np.array(x, dtype=float, copy=True)
    _, g = _evaluate(objective, x)
    idx = np.arange(x.size) if indices is None else np.asarray(indices)

    def at(i, old, step):
        x[i] = old + step
        f, _ = _evaluate(objective, x)
        return f

    worst = 0.0
    for i in idx:
        old = x[i]
        d1 = at(i, old, h) - at(i, old, -h)
        if order == 2:
            fd = d1 / (2.0 * h)
        else:
            d2 = at(i, old, 2 * h) - at(i, old, -2 * h)
            fd = (8.0 * d1 - d2) / (12.0 * h)
        x[i] = old
        worst = max(worst, abs(g[i] - fd) / (abs(g[i]) + h))
    return worst


def smallest_eigenvalue(apply, metric=None, dim=None, tol=1e-9, max_iter=20000, precondition=None,
                        x0=None, seed=0):
    """Smallest eigenpair of the pencil ``A x = lambda M x`` with diagonal ``M``.

    Locally optimal block-free preconditioned conjugate gradient iteration:
    each step performs a Rayleigh-Ritz projection on the span of the current
    vector, the (preconditioned) residual and the previous search direction.
    Returns ``(lambda, x)`` with ``x`` normalised in the ``M`` inner product.
    Convergence is declared when ``||A x - lambda M x||_{M^-1} <= tol * max(1, |lambda|)``.
    """
    if dim is None:
        if metric is None:
            raise ValueError("dim is required when no metric is given")
        dim = len(metric)
    m = np.ones(dim) if metric is None else np.asarray(metric, dtype=float)
    if np.any(m <= 0):
        raise ValueError("metric weights must be positive")
    if dim == 1:
        e = np.ones(1)
        lam = float(apply(e)[0] / m[0])
        return lam, e / np.sqrt(m[0])
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(dim) if x0 is None else np.array(x0, dtype=float, copy=True)
    x /= np.sqrt(x @ (m * x))
    ax = apply(x)
    lam = float(x @ ax)
    p = ap = None
    for it in range(max_iter):
        r = ax - lam * m * x
        res = float(np.sqrt(r @ (r / m)))
        if res <= tol * max(1.0, abs(lam)):
            return lam, x
        w = precondition(r) if precondition is not None else r / m
        # keep the Gram matrix well conditioned as the residual shrinks
        w = w - x * float(x @ (m * w))
        w /= np.sqrt(w @ (m * w))
        if p is not None:
            xp = float(x @ (m * p))
            p = p - xp * x
            ap = ap - xp * ax
            pn = np.sqrt(p @ (m * p))
            if pn > 1e-14:
                p /= pn
                ap /= pn
            else:
                p = ap = None
        basis = [x, w] if p is None else [x, w, p]
        images = [ax, apply(w)] if p is None else [ax, apply(w), ap]
        V = np.stack(basis, axis=1)
        AV = np.stack(images, axis=1)
        B = V.T @ (m[:, None] * V)
        A = V.T @ AV
        A = 0.5 * (A + A.T)
        # drop directions that are numerically dependent in the M inner product
        bs, bv = np.linalg.eigh(B)
        keep = bs > 1e-12 * bs.max()
        T = bv[:, keep] / np.sqrt(bs[keep])
        evals, evecs = np.linalg.eigh(T.T @ A @ T)
        c = T @ evecs[:, 0]
        x_new = V @ c
        ax_new = AV @ c
        nrm = np.sqrt(x_new @ (m * x_new))
        x_new /= nrm
        ax_new /= nrm
        c = c / nrm
        # search direction: the part of the update outside the current vector
        p = V[:, 1:] @ c[1:]
        ap = AV[:, 1:] @ c[1:]
        pn = np.sqrt(p @ (m * p))
        if pn > 0:
            p /= pn
            ap /= pn
        else:
            p = ap = None
        x, ax = x_new, ax_new
        lam = float(x @ ax)
    raise EigenConvergenceError(f"smallest eigenvalue not converged after {max_iter} iterations")
