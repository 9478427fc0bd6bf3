"""Symmetric double-well potentials on the plane.

Two families are supported:

* ``"abg"``: ``W = (s - 1)^2 + (t - alpha (1 - s))^2 + gamma t`` with
  ``s = xi1^2`` and ``t = xi2^2``; wells at ``(+-1, 0)``.
* ``"poly"``: an arbitrary polynomial ``sum c_ij s^i t^j`` in the same
  squared variables, so evenness in each coordinate holds by construction.

All evaluators accept arrays of shape ``(..., 2)`` and broadcast over the
leading axes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

WELL_PLUS = np.array([1.0, 0.0])
WELL_MINUS = np.array([-1.0, 0.0])


class PotentialDomainError(ValueError):
    """Raised when a potential is evaluated at a non-finite point."""


class HypothesisViolation(ValueError):
    """Raised when a computation needs a hypothesis the potential fails."""


def _as_points(xi):
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1:] != (2,):
        raise ValueError(f"expected points with trailing dimension 2, got shape {xi.shape}")
    if not np.all(np.isfinite(xi)):
        raise PotentialDomainError("potential evaluated at a non-finite point")
    return xi


@dataclass(frozen=True)
class PotentialSpec:
    """Immutable description of a double-well potential.

    ``coeffs`` is only used by the ``"poly"`` family and maps exponent pairs
    ``(i, j)`` to the coefficient of ``xi1^(2i) xi2^(2j)``. ``R`` is the
    coercivity radius; when left as ``None`` it is located numerically.
    """

    family: str = "abg"
    alpha: float = 2.0
    gamma: float = 0.3
    coeffs: tuple = ()
    R: float | None = None
    _R: float = field(init=False, repr=False, compare=False, default=0.0)

    def __post_init__(self):
        if self.family not in ("abg", "poly"):
            raise ValueError(f"unknown potential family {self.family!r}")
        if self.family == "poly":
            if not self.coeffs:
                raise ValueError("poly family needs a non-empty coefficient list")
            cleaned = tuple(sorted((int(i), int(j), float(c)) for i, j, c in self.coeffs))
            if any(i < 0 or j < 0 for i, j, _ in cleaned):
                raise ValueError("polynomial exponents must be non-negative")
            object.__setattr__(self, "coeffs", cleaned)
        radius = self.R if self.R is not None else _coercivity_radius(self)
        if radius <= 1.0:
            raise ValueError("coercivity radius must exceed 1")
        object.__setattr__(self, "_R", float(radius))

    @property
    def radius(self) -> float:
        return self._R

    @property
    def wells(self):
        return WELL_MINUS.copy(), WELL_PLUS.copy()

    # -- polynomial view -------------------------------------------------
    def poly_coeffs(self):
        """Coefficients ``(i, j, c)`` of W as a polynomial in ``(xi1^2, xi2^2)``."""
        if self.family == "poly":
            return self.coeffs
        a, g = self.alpha, self.gamma
        terms = {
            (0, 0): 1.0 + a * a,
            (1, 0): -2.0 - 2.0 * a * a,
            (2, 0): 1.0 + a * a,
            (0, 1): g - 2.0 * a,
            (1, 1): 2.0 * a,
            (0, 2): 1.0,
        }
        return tuple((i, j, c) for (i, j), c in sorted(terms.items()))

    # -- evaluation ------------------------------------------------------
    def value(self, xi):
        xi = _as_points(xi)
        x, y = xi[..., 0], xi[..., 1]
        if self.family == "abg":
            s = x * x
            t = y * y
            e = t - self.alpha * (1.0 - s)
            return (s - 1.0) ** 2 + e * e + self.gamma * t
        s, t = x * x, y * y
        out = np.zeros_like(s)
        for i, j, c in self.coeffs:
            out = out + c * s**i * t**j
        return out

    def grad(self, xi):
        xi = _as_points(xi)
        x, y = xi[..., 0], xi[..., 1]
        out = np.empty(xi.shape)
        if self.family == "abg":
            s = x * x
            t = y * y
            e = t - self.alpha * (1.0 - s)
            out[..., 0] = 4.0 * x * (s - 1.0) + 4.0 * self.alpha * x * e
            out[..., 1] = 4.0 * y * e + 2.0 * self.gamma * y
            return out
        ds, dt = self._poly_first(x * x, y * y)
        out[..., 0] = 2.0 * x * ds
        out[..., 1] = 2.0 * y * dt
        return out

    def hess(self, xi):
        xi = _as_points(xi)
        x, y = xi[..., 0], xi[..., 1]
        out = np.empty(xi.shape + (2,))
        if self.family == "abg":
            a = self.alpha
            s = x * x
            t = y * y
            out[..., 0, 0] = 12.0 * s - 4.0 + 4.0 * a * t - 4.0 * a * a + 12.0 * a * a * s
            out[..., 0, 1] = 8.0 * a * x * y
            out[..., 1, 0] = out[..., 0, 1]
            out[..., 1, 1] = 12.0 * t - 4.0 * a * (1.0 - s) + 2.0 * self.gamma
            return out
        s, t = x * x, y * y
        ds, dt = self._poly_first(s, t)
        dss, dst, dtt = self._poly_second(s, t)
        # chain rule for W(s(x), t(y)) with s = x^2, t = y^2
        out[..., 0, 0] = 2.0 * ds + 4.0 * s * dss
        out[..., 0, 1] = 4.0 * x * y * dst
        out[..., 1, 0] = out[..., 0, 1]
        out[..., 1, 1] = 2.0 * dt + 4.0 * t * dtt
        return out

    def _poly_first(self, s, t):
        ds = np.zeros_like(s)
        dt = np.zeros_like(s)
        for i, j, c in self.coeffs:
            if i:
                ds = ds + c * i * s ** (i - 1) * t**j
            if j:
                dt = dt + c * j * s**i * t ** (j - 1)
        return ds, dt

    def _poly_second(self, s, t):
        dss = np.zeros_like(s)
        dst = np.zeros_like(s)
        dtt = np.zeros_like(s)
        for i, j, c in self.coeffs:
            if i >= 2:
                dss = dss + c * i * (i - 1) * s ** (i - 2) * t**j
            if i and j:
                dst = dst + c * i * j * s ** (i - 1) * t ** (j - 1)
            if j >= 2:
                dtt = dtt + c * j * (j - 1) * s**i * t ** (j - 2)
        return dss, dst, dtt


def _coercivity_radius(p: PotentialSpec, r_max: float = 20.0, n_r: int = 400, n_theta: int = 721):
    """Smallest sampled R > 1 with grad W(xi).xi > 0 for all sampled |xi| >= R."""
    radii = np.linspace(1.0, r_max, n_r)
    theta = np.linspace(0.0, 2.0 * np.pi, n_theta)
    pts = np.stack(
        [radii[:, None] * np.cos(theta)[None, :], radii[:, None] * np.sin(theta)[None, :]], axis=-1
    )
    # direct call avoids recursion through the radius property
    radial = np.einsum("...k,...k->...", PotentialSpec.grad(p, pts), pts)
    bad = np.nonzero(np.min(radial, axis=1) <= 0.0)[0]
    if bad.size == 0:
        return 1.05
    if bad[-1] == n_r - 1:
        raise HypothesisViolation("no coercivity radius found below r_max; (W2) appears to fail")
    step = radii[1] - radii[0]
    return float(max(1.05, radii[bad[-1]] + 2.0 * step))


def make_potential(family="abg", alpha=2.0, gamma=0.3, coeffs=(), R=None) -> PotentialSpec:
    return PotentialSpec(family=family, alpha=alpha, gamma=gamma, coeffs=tuple(coeffs), R=R)


# Functional aliases, mirroring the operation names used across the package.
def eval_W(p: PotentialSpec, xi):
    return p.value(xi)


def grad_W(p: PotentialSpec, xi):
    return p.grad(xi)


def hess_W(p: PotentialSpec, xi):
    return p.hess(xi)


def chi(p: PotentialSpec, xi):
    """Distance to the nearest well."""
    xi = np.asarray(xi, dtype=float)
    a_minus, a_plus = p.wells
    return np.minimum(np.linalg.norm(xi - a_minus, axis=-1), np.linalg.norm(xi - a_plus, axis=-1))


@dataclass(frozen=True)
class WellConstants:
    w_lower: float
    w_upper: float
    delta_bar: float
    lambda_min_plus: float


def _ball_samples(center, radius, n):
    r = np.linspace(0.0, radius, n)
    th = np.linspace(0.0, 2.0 * np.pi, 2 * n, endpoint=False)
    pts = center + np.stack([r[:, None] * np.cos(th), r[:, None] * np.sin(th)], axis=-1)
    return pts.reshape(-1, 2)


def well_constants(p: PotentialSpec, samples: int = 41, delta_floor: float = 1e-3) -> WellConstants:
    """Neighbourhood radius and Hessian bounds around the wells.

    A radius ``delta`` is accepted when, on the sampled balls of radius
    ``2 delta`` around both wells, the smallest Hessian eigenvalue stays above
    half the smallest eigenvalue at the wells themselves, and the quadratic
    sandwich bounds on W and |grad W| hold at every sample.
    """
    a_minus, a_plus = p.wells
    h_plus = np.linalg.eigvalsh(p.hess(a_plus))
    h_minus = np.linalg.eigvalsh(p.hess(a_minus))
    lam_well = min(h_plus[0], h_minus[0])
    if lam_well <= 0.0:
        raise HypothesisViolation("Hessian at a well is not positive definite")

    def check(delta):
        pts = np.concatenate([_ball_samples(a, 2.0 * delta, samples) for a in (a_minus, a_plus)])
        eig = np.linalg.eigvalsh(p.hess(pts))
        lo, hi = eig[:, 0].min(), eig[:, -1].max()
        if lo < 0.5 * lam_well:
            return None
        w_lo, w_hi = 0.5 * lo, 0.5 * hi
        c = chi(p, pts)
        W = p.value(pts)
        gnorm = np.linalg.norm(p.grad(pts), axis=-1)
        slack = 1e-12
        ok = (
            np.all(w_lo * c**2 <= W + slack)
            and np.all(W <= w_hi * c**2 + slack)
            and np.all(gnorm <= 2.0 * w_hi * c + slack)
        )
        return (w_lo, w_hi) if ok else None

    hi_d = 0.125 * (1.0 - 1e-9)
    found = check(hi_d)
    delta = hi_d
    if found is None:
        lo_d = delta_floor
        if check(lo_d) is None:
            raise HypothesisViolation(f"no neighbourhood radius >= {delta_floor} satisfies the well bounds")
        for _ in range(40):
            mid = 0.5 * (lo_d + hi_d)
            if check(mid) is None:
                hi_d = mid
            else:
                lo_d = mid
        delta = lo_d
        found = check(delta)
    w_lo, w_hi = found
    return WellConstants(w_lower=float(w_lo), w_upper=float(max(w_hi, w_lo)), delta_bar=float(delta),
                         lambda_min_plus=float(h_plus[0]))


@dataclass
class HypothesisReport:
    passed: dict
    details: dict

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def lines(self):
        return [f"{k}: {'pass' if v else 'FAIL'} ({self.details[k]})" for k, v in self.passed.items()]


def validate_hypotheses(p: PotentialSpec, n_samples: int = 201) -> HypothesisReport:
    """Sampled checks of the well, coercivity and evenness hypotheses."""
    R = p.radius
    g = np.linspace(-2.0 * R, 2.0 * R, n_samples)
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    a_minus, a_plus = p.wells
    passed, details = {}, {}

    W_wells = np.abs(p.value(np.stack([a_minus, a_plus])))
    far = chi(p, pts) > 1e-9
    W_far = p.value(pts[far])
    hess_eigs = [np.linalg.eigvalsh(p.hess(a)) for a in (a_minus, a_plus)]
    min_hess = min(e[0] for e in hess_eigs)
    w1 = bool(W_wells.max() <= 1e-12 and W_far.min() > 0.0 and min_hess > 1e-12)
    passed["W1"] = w1
    details["W1"] = (f"max|W(a)|={W_wells.max():.2e}, min W off wells={W_far.min():.3e}, "
                     f"min Hessian eig at wells={min_hess:.3e}")

    theta = np.linspace(0.0, 2.0 * np.pi, 4 * n_samples, endpoint=False)
    radii = np.linspace(R, 2.0 * R, 9)
    circ = np.stack([np.outer(radii, np.cos(theta)), np.outer(radii, np.sin(theta))], axis=-1)
    radial = np.einsum("...k,...k->...", p.grad(circ), circ)
    passed["W2"] = bool(radial.min() > 0.0)
    details["W2"] = f"R={R:.4f}, min grad W.xi on |xi| in [R, 2R] = {radial.min():.3e}"

    flip1 = pts * np.array([-1.0, 1.0])
    flip2 = pts * np.array([1.0, -1.0])
    W0 = p.value(pts)
    asym = max(np.abs(p.value(flip1) - W0).max(), np.abs(p.value(flip2) - W0).max())
    passed["W3"] = bool(asym == 0.0)
    details["W3"] = f"max evenness defect = {asym:.3e}"
    return HypothesisReport(passed=passed, details=details)
