"""Minimal heteroclinic connections between the two wells.

Profiles live on a uniform grid of ``[-X, X]`` with an odd node count. The
class of odd-even profiles (first component odd, second even) is handled by a
reduced parameterisation on ``[0, X]``: ``q1(0) = 0`` is pinned, ``q2(0)`` is
free and ``q(X) = a+`` is clamped.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .lattice import LatticeEnergy, folded_weights, newton_polish
from .optimize import MinimizeOptions, StallError, minimize, smallest_eigenvalue
from .potential import PotentialSpec, make_potential, well_constants

logger = logging.getLogger(__name__)


class SolverFailure(RuntimeError):
    """No admissible critical point could be computed."""


class FitError(ValueError):
    pass


class GridMismatchError(ValueError):
    """A renormalising constant was computed on a different grid."""


@dataclass(frozen=True)
class Level1D:
    """Discrete minimal action together with the grid it was computed on."""

    value: float
    X: float
    n: int

    @property
    def h(self) -> float:
        return 2.0 * self.X / (self.n - 1)

    def check_grid(self, X, n):
        if n != self.n or abs(X - self.X) > 1e-12 * max(1.0, abs(X)):
            raise GridMismatchError(
                f"minimal action computed on X={self.X}, n={self.n} but the field uses X={X}, n={n}")


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------
@dataclass
class Profile1D:
    X: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != 2:
            raise ValueError("profile values must have shape (n, 2)")
        if self.values.shape[0] < 3 or self.values.shape[0] % 2 == 0:
            raise ValueError("profile node count must be odd and at least 3")
        if not self.X > 0:
            raise ValueError("half-extent must be positive")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return 2.0 * self.X / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-self.X, self.X, self.n)

    @property
    def half(self) -> np.ndarray:
        """Values on ``[0, X]``."""
        return self.values[(self.n - 1) // 2:]

    @classmethod
    def from_half(cls, X, half):
        half = np.asarray(half, dtype=float)
        mirror = half[:0:-1] * np.array([-1.0, 1.0])
        return cls(X, np.vstack([mirror, half]))

    def bar(self) -> "Profile1D":
        return Profile1D(self.X, self.values * np.array([1.0, -1.0]))

    def q2_at_0(self) -> float:
        return float(self.values[(self.n - 1) // 2, 1])

    def is_symmetric(self, tol=0.0) -> bool:
        flipped = self.values[::-1] * np.array([-1.0, 1.0])
        return bool(np.max(np.abs(flipped - self.values)) <= tol)

    def sign_condition(self) -> bool:
        x = self.x
        mask = x != 0
        return bool(np.all(self.values[mask, 0] * x[mask] > 0))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([np.interp(x, self.x, self.values[:, k]) for k in range(2)], axis=-1)


def reference_profile(X, n) -> Profile1D:
    """Smooth odd reference connection, equal to the wells for ``|x| >= 1``."""
    x = np.linspace(-X, X, n)
    xc = np.clip(x, -1.0, 1.0)
    q1 = xc * (3.0 - xc ** 2) / 2.0
    return Profile1D(X, np.stack([q1, np.zeros_like(x)], axis=-1))


def l2_distance(a: Profile1D, b: Profile1D) -> float:
    if a.n != b.n or a.X != b.X:
        raise ValueError("profiles live on different grids")
    w = np.full(a.n, a.h)
    w[0] = w[-1] = 0.5 * a.h
    d2 = np.sum((a.values - b.values) ** 2, axis=1)
    return float(np.sqrt(w @ d2))


def symmetrize1d(q: Profile1D) -> Profile1D:
    flipped = q.values[::-1]
    v = np.empty_like(q.values)
    v[:, 0] = 0.5 * (q.values[:, 0] - flipped[:, 0])
    v[:, 1] = 0.5 * (q.values[:, 1] + flipped[:, 1])
    return Profile1D(q.X, v)


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------
def _kinetic_potential(p, q: Profile1D):
    h = q.h
    kin = 0.5 * float(np.sum(np.diff(q.values, axis=0) ** 2)) / h
    w = np.full(q.n, h)
    w[0] = w[-1] = 0.5 * h
    pot = float(w @ p.value(q.values))
    return kin, pot


def phi1(p: PotentialSpec, q: Profile1D) -> float:
    """Trapezoid quadrature of the action, with cell differences for the derivative."""
    kin, pot = _kinetic_potential(p, q)
    return kin + pot


def equipartition(p: PotentialSpec, q: Profile1D) -> float:
    """Relative mismatch between kinetic and potential parts of the action."""
    kin, pot = _kinetic_potential(p, q)
    return abs(kin - pot) / (kin + pot)


def reduced_energy(p: PotentialSpec, X: float, n: int, scalar: bool = False, base=None) -> LatticeEnergy:
    """Action of symmetric profiles as a function of the free half-line values.

    With ``scalar=True`` the second component is frozen at zero.
    """
    if n < 3 or n % 2 == 0:
        raise ValueError("node count must be odd and at least 3")
    N = (n - 1) // 2
    h = 2.0 * X / (n - 1)
    free = np.ones((N + 1, 2), dtype=bool)
    free[0, 0] = False
    free[N, :] = False
    if scalar:
        free[:, 1] = False
    if base is None:
        base = np.zeros((N + 1, 2))
        base[N] = p.wells[1]
    return LatticeEnergy(p, folded_weights(N, h), [np.full(N, 1.0 / h)], free, base)


def grad_phi1(p: PotentialSpec, q: Profile1D) -> np.ndarray:
    """Gradient of the discrete action with respect to the free half-line values."""
    E = reduced_energy(p, q.X, q.n, base=q.half)
    _, g = E(E.pack(q.half))
    return g


# ---------------------------------------------------------------------------
# minimisation
# ---------------------------------------------------------------------------
@dataclass
class Critical1D:
    profile: Profile1D
    energy: float
    grad_norm: float
    scalar: bool
    q2_at_0: float
    seed: str = ""


@dataclass
class MinimizerSet:
    """Distinct converged critical points, sorted by energy."""

    profiles: list
    energies: list
    grad_norms: list
    scalar_flags: list
    q2_at_0: list
    seeds: list = field(default_factory=list)
    energy_tol: float = 1e-8

    @property
    def m1(self) -> float:
        return float(self.energies[0])

    def least(self):
        """Indices of the least-energy profiles."""
        m = self.m1
        return [i for i, e in enumerate(self.energies) if e - m <= self.energy_tol * max(1.0, abs(m))]

    @property
    def level(self) -> Level1D:
        q = self.profiles[0]
        return Level1D(self.m1, q.X, q.n)

    @property
    def minimal_profiles(self):
        return [self.profiles[i] for i in self.least()]

    @property
    def separation(self) -> float:
        prof = self.minimal_profiles
        if len(prof) < 2:
            return float("inf")
        return min(l2_distance(a, b) for i, a in enumerate(prof) for b in prof[i + 1:])

    @property
    def d0(self) -> float:
        return self.separation / 5.0

    def distance_to_set(self, q: Profile1D) -> float:
        return min(l2_distance(q, r) for r in self.minimal_profiles)

    def summary(self):
        return {
            "m1": self.m1,
            "n_minimal": len(self.least()),
            "separation": self.separation,
            "q2_at_0": [self.q2_at_0[i] for i in self.least()],
        }


def default_seeds(X, n, bump=1.0, jitter=1e-3):
    """Scalar reference profile plus positive and negative second-component bumps.

    The scalar seed carries a tiny even bump so that descent can leave the
    invariant scalar subspace when the scalar connection is unstable.
    """
    ref = reference_profile(X, n)
    x = ref.x
    shape = np.exp(-x ** 2)
    shape[0] = shape[-1] = 0.0
    seeds = {}
    for name, amp in (("scalar", jitter), ("bump+", bump), ("bump-", -bump)):
        v = ref.values.copy()
        v[:, 1] = amp * shape
        seeds[name] = Profile1D(X, v)
    return seeds


def _minimize_profile(E: LatticeEnergy, z0, opts, polish=True):
    precond = E.laplace_preconditioner(shift=1.0)
    try:
        res = minimize(E, z0, options=opts, precondition=precond)
        z = res.x
    except StallError as exc:
        z = exc.result.x
    if polish:
        z, f, gn = newton_polish(E, z, grad_tol=min(opts.grad_tol, 1e-11))
    else:
        f, g = E(z)
        gn = float(np.linalg.norm(g))
    return z, f, gn


def solve_profile(p, seed: Profile1D, opts=None, scalar=False):
    """Descend from ``seed`` (after symmetrisation) and return a :class:`Critical1D`."""
    opts = opts or MinimizeOptions()
    seed = symmetrize1d(seed)
    half = seed.half.copy()
    half[0, 0] = 0.0
    half[-1] = p.wells[1]
    if scalar:
        half[:, 1] = 0.0
    E = reduced_energy(p, seed.X, seed.n, scalar=scalar, base=half)
    z, f, gn = _minimize_profile(E, E.pack(half), opts)
    prof = Profile1D.from_half(seed.X, E.unpack(z))
    return Critical1D(prof, float(f), gn, bool(np.max(np.abs(prof.values[:, 1])) < 1e-8), prof.q2_at_0())


def scalar_connection(p, X, n, opts=None) -> Critical1D:
    """Least-action connection constrained to the first axis."""
    return solve_profile(p, reference_profile(X, n), opts, scalar=True)


def find_heteroclinics(p: PotentialSpec, X=10.0, n=4001, seeds=None, opts=None, dedup=0.1,
                       n_jobs=1, close_bar=True) -> MinimizerSet:
    """Multistart search for minimal heteroclinics in the odd-even class.

    ``seeds`` maps names to :class:`Profile1D`; ``None`` selects
    :func:`default_seeds`. Converged critical points closer than ``dedup`` in
    L2 are merged, keeping the lower energy.
    """
    opts = opts or MinimizeOptions()
    if seeds is None:
        seeds = default_seeds(X, n)
    elif not isinstance(seeds, dict):
        seeds = {f"user{k}": s for k, s in enumerate(seeds)}
    if len(seeds) == 0:
        raise SolverFailure("no seeds were supplied")
    for s in seeds.values():
        if s.n != n or s.X != X:
            raise ValueError("seed grid does not match the requested grid")

    def run(item):
        name, s = item
        c = solve_profile(p, s, opts)
        c.seed = name
        return c

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            found = list(pool.map(run, seeds.items()))
    else:
        found = [run(it) for it in seeds.items()]

    accept_tol = max(10.0 * opts.grad_tol, 1e-8)
    traces = [(c.seed, c.energy, c.grad_norm) for c in found]
    found = [c for c in found if c.grad_norm <= accept_tol]
    if not found:
        raise SolverFailure(f"no seed converged: {traces}")
    if close_bar:
        extra = []
        for c in found:
            if not c.scalar:
                b = c.profile.bar()
                extra.append(Critical1D(b, phi1(p, b), c.grad_norm, False, b.q2_at_0(), c.seed + "/bar"))
        found += extra

    found.sort(key=lambda c: c.energy)
    kept = []
    for c in found:
        if all(l2_distance(c.profile, k.profile) >= dedup for k in kept):
            kept.append(c)
    logger.info("found %d distinct critical points (energies %s)", len(kept),
                ", ".join(f"{c.energy:.10f}" for c in kept))
    return MinimizerSet(
        profiles=[c.profile for c in kept],
        energies=[c.energy for c in kept],
        grad_norms=[c.grad_norm for c in kept],
        scalar_flags=[c.scalar for c in kept],
        q2_at_0=[c.q2_at_0 for c in kept],
        seeds=[c.seed for c in kept],
    )


# ---------------------------------------------------------------------------
# second variation
# ---------------------------------------------------------------------------
@dataclass
class SpectralReport:
    omega_star: list
    eigenvectors: list

    @property
    def omega_min(self) -> float:
        return float(min(self.omega_star))


def second_variation_operator(p: PotentialSpec, q: Profile1D):
    """Sparse form matrix and diagonal L2 mass of the second variation on odd-even perturbations."""
    E = reduced_energy(p, q.X, q.n, base=q.half)
    z = E.pack(q.half)
    return E.hessian(z), E.mass(), E


def second_variation_min(p: PotentialSpec, q: Profile1D, tol=1e-10, seed=0):
    """Smallest eigenvalue of the second variation and its eigenvector as a full profile.

    Perturbations have odd first and even second components and vanish at
    the ends of the interval.
    """
    H, m, E = second_variation_operator(p, q)
    hess = p.hess(q.half)
    shift = max(0.0, -float(np.min(np.linalg.eigvalsh(hess)))) + 1.0
    lu = spla.splu((H + shift * sp.diags(m)).tocsc())
    lam, z = smallest_eigenvalue(lambda v: H @ v, metric=m, tol=tol, precondition=lu.solve, seed=seed)
    full = np.zeros_like(q.half)
    full[E.free] = z
    vec = Profile1D.from_half(q.X, full)
    if np.sum(vec.values) < 0:
        vec = Profile1D(q.X, -vec.values)
    return float(lam), vec


def spectral_report(p: PotentialSpec, ms: MinimizerSet, indices=None) -> SpectralReport:
    idx = range(len(ms.profiles)) if indices is None else indices
    out = [second_variation_min(p, ms.profiles[i]) for i in idx]
    return SpectralReport([o[0] for o in out], [o[1] for o in out])


# ---------------------------------------------------------------------------
# certificates and estimates
# ---------------------------------------------------------------------------
@dataclass
class Certificate:
    star: bool
    star_star: bool
    q2_margin: float
    omega_margin: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.star and self.star_star

    def lines(self):
        return [
            f"(*)  {'holds' if self.star else 'fails'}: min |q2(0)| over minimal set = {self.q2_margin:.6g} (tol {self.tol:g})",
            f"(**) {'holds' if self.star_star else 'fails'}: min omega* over minimal set = {self.omega_margin:.6g} (tol {self.tol:g})",
        ]


def certify_conditions(ms: MinimizerSet, sr: SpectralReport, tol=1e-6) -> Certificate:
    """Discreteness with nonzero second component at the origin, and a positive spectral gap.

    ``sr`` must list one entry per profile of ``ms`` in the same order.
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    if len(sr.omega_star) != len(ms.profiles):
        raise ValueError("spectral report does not match the minimiser set")
    least = ms.least()
    q2 = min(abs(ms.q2_at_0[i]) for i in least)
    om = min(sr.omega_star[i] for i in least)
    return Certificate(star=q2 > tol, star_star=om > tol, q2_margin=q2, omega_margin=om, tol=tol)


@dataclass
class DecayFit:
    T_fit: float
    rate: float
    prefactor: float
    r_squared: float
    asymptotic_rate: float
    guaranteed_floor: float
    window: tuple


def check_decay(q: Profile1D, lambda_min_plus: float, p: PotentialSpec = None, delta_bar=None,
                floor=1e-8) -> DecayFit:
    """Least-squares exponential fit of ``|q(x) - a+|`` on the right tail.

    The window keeps points with ``floor <= |q - a+| <= delta_bar`` and stays
    clear of the clamped end, where the discrete profile bends to meet the
    boundary value.
    """
    if lambda_min_plus <= 0:
        raise ValueError("well eigenvalue must be positive")
    w_lower = float("nan")
    if p is not None:
        wc = well_constants(p)
        w_lower = wc.w_lower
        if delta_bar is None:
            delta_bar = wc.delta_bar
    if delta_bar is None:
        delta_bar = 0.125
    x = q.x
    r = np.linalg.norm(q.values - np.array([1.0, 0.0]), axis=1)
    x_end = q.X - min(q.X / 2.0, 2.5 / np.sqrt(lambda_min_plus))
    sel = (x > 0) & (r <= delta_bar) & (r >= floor) & (x <= x_end)
    if np.count_nonzero(sel) < 3:
        raise FitError("decay window is empty")
    xs, ys = x[sel], np.log(r[sel])
    A = np.stack([np.ones_like(xs), xs], axis=1)
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    resid = ys - A @ coef
    ss = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss if ss > 0 else 1.0
    return DecayFit(
        T_fit=float(xs[0]),
        rate=float(-coef[1]),
        prefactor=float(np.exp(coef[0])),
        r_squared=r2,
        asymptotic_rate=float(np.sqrt(lambda_min_plus)),
        guaranteed_floor=float(np.sqrt(w_lower / 2.0)),
        window=(float(xs[0]), float(xs[-1])),
    )


@dataclass
class GrowthProbe:
    lhs: np.ndarray
    rhs: np.ndarray
    amplitudes: np.ndarray
    violations: list

    @property
    def passed(self) -> bool:
        return not self.violations


def _smooth_symmetric_perturbation(q: Profile1D, rng, n_modes=6):
    x = q.x
    X = q.X
    h = np.zeros_like(q.values)
    for k in range(1, n_modes + 1):
        a, b = rng.standard_normal(2) / k
        h[:, 0] += a * np.sin(np.pi * k * x / X)
        h[:, 1] += b * np.cos(np.pi * (k - 0.5) * x / X)
    h[0] = h[-1] = 0.0
    return h


def quadratic_growth_probe(p: PotentialSpec, ms: MinimizerSet, omega_star: float, n_probes=20,
                           max_amplitude=0.1, seed=0, directions=(), tol=1e-10) -> GrowthProbe:
    """Compare ``phi1(q + h) - m1`` with ``(omega*/4) dist(q + h, M1)^2`` for small ``h``.

    Random smooth odd-even perturbations of L2 norm at most ``max_amplitude``
    are drawn around every minimal profile; ``directions`` adds explicit
    perturbations (arrays of profile shape). Perturbations larger than
    ``max_amplitude`` are skipped.
    """
    rng = np.random.default_rng(seed)
    lhs, rhs, amps, bad = [], [], [], []
    probes = []
    for q in ms.minimal_profiles:
        for _ in range(n_probes):
            h = _smooth_symmetric_perturbation(q, rng)
            nrm = l2_distance(Profile1D(q.X, h), Profile1D(q.X, np.zeros_like(h)))
            probes.append((q, h * rng.uniform(0.0, max_amplitude) / nrm))
        for d in directions:
            probes.append((q, np.asarray(d, dtype=float)))
    zero = None
    for q, h in probes:
        if zero is None or zero.n != q.n:
            zero = Profile1D(q.X, np.zeros_like(q.values))
        amp = l2_distance(Profile1D(q.X, h), zero)
        if amp > max_amplitude:
            continue
        qh = Profile1D(q.X, q.values + h)
        a = phi1(p, qh) - ms.m1
        b = 0.25 * omega_star * ms.distance_to_set(qh) ** 2
        lhs.append(a)
        rhs.append(b)
        amps.append(amp)
        if a < b - tol:
            bad.append((amp, a, b))
    return GrowthProbe(np.array(lhs), np.array(rhs), np.array(amps), bad)


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------
class HeteroclinicSolver(BaseEstimator):
    """Minimal heteroclinic connections of a planar double-well potential.

    After :meth:`fit`, ``minimizers_`` holds the critical points found by
    multistart, ``spectral_`` their second-variation gaps and
    ``certificate_`` the discreteness and non-degeneracy verdict.
    :meth:`predict` evaluates the least-energy profile (or ``index``) at
    abscissae ``x``.
    """

    def __init__(self, family="abg", alpha=2.0, gamma=0.3, coeffs=(), X=10.0, n=4001, grad_tol=1e-8,
                 max_iter=20000, memory=12, dedup=0.1, cert_tol=1e-6, n_jobs=1):
        self.family = family
        self.alpha = alpha
        self.gamma = gamma
        self.coeffs = coeffs
        self.X = X
        self.n = n
        self.grad_tol = grad_tol
        self.max_iter = max_iter
        self.memory = memory
        self.dedup = dedup
        self.cert_tol = cert_tol
        self.n_jobs = n_jobs

    def _potential(self):
        return make_potential(self.family, self.alpha, self.gamma, tuple(self.coeffs))

    def fit(self, X=None, y=None):
        """Run the multistart search; the arguments are ignored."""
        self.potential_ = self._potential()
        opts = MinimizeOptions(max_iter=self.max_iter, grad_tol=self.grad_tol, memory=self.memory)
        self.minimizers_ = find_heteroclinics(self.potential_, self.X, self.n, opts=opts, dedup=self.dedup,
                                              n_jobs=self.n_jobs)
        self.spectral_ = spectral_report(self.potential_, self.minimizers_)
        self.certificate_ = certify_conditions(self.minimizers_, self.spectral_, self.cert_tol)
        self.m1_ = self.minimizers_.m1
        return self

    def predict(self, x, index=None):
        check_is_fitted(self, "minimizers_")
        x = np.asarray(x, dtype=float).ravel()
        i = self.minimizers_.least()[0] if index is None else index
        return self.minimizers_.profiles[i](x)
