"""Stage orchestration: 1D minimisers, spectral gap, strip table, planar heteroclinic, prism, assembly.

Every stage hashes the configuration keys it reads together with the hashes
of the stages it consumes. Outputs go to ``out_dir`` and are recorded in the
manifest; a stage refuses to run on upstream outputs that are missing, were
modified, or were produced from a different configuration.
"""
from __future__ import annotations

import hashlib
import logging
import os

import numpy as np

from .assemble import ReflectionAssembly, check_assembly, export_field3d
from .config import ConfigError, RunConfig
from .one_dim import (
    FitError,
    MinimizerSet,
    Profile1D,
    SolverFailure,
    SpectralReport,
    certify_conditions,
    check_decay,
    equipartition,
    find_heteroclinics,
    l2_distance,
    quadratic_growth_probe,
    scalar_connection,
    spectral_report,
)
from .optimize import MinimizeOptions
from .persist import (
    DependencyError,
    StageManifest,
    Timer,
    load_npz,
    read_array_csv,
    read_csv,
    save_npz,
    write_array_csv,
    write_csv,
    write_json,
)
from .potential import make_potential, validate_hypotheses, well_constants
from .prism3d import (
    Field3D,
    PrismGrid,
    check_far_field,
    prism_table,
    slice_diagnostics,
    solve_prism,
)
from .strip2d import check_2d_decay, m2l_table, midline_distance, solve_hetero2d, solve_PL2

logger = logging.getLogger(__name__)


class CertificateFailure(RuntimeError):
    """The sampled hypotheses or the discreteness/non-degeneracy certificate failed."""

    def __init__(self, lines):
        super().__init__("\n".join(lines))
        self.lines = lines


# configuration keys read by each stage
STAGE_KEYS = {
    "heteroclinic": ["potential.", "opt.", "one_dim."],
    "spectrum": ["run.seed", "one_dim.n_probes"],
    "check": ["check.", "potential.samples"],
    "strip": ["strip.X", "strip.h", "hetero.q_index"],
    "m2l-table": ["strip.X", "strip.h", "strip.L_list", "hetero.q_index"],
    "hetero2d": ["strip.X", "strip.h", "hetero."],
    "prism": ["prism.", "hetero.q_index"],
    "assemble": ["assemble.", "run.seed"],
}
UPSTREAM = {
    "heteroclinic": [],
    "spectrum": ["heteroclinic"],
    "check": ["heteroclinic", "spectrum"],
    "strip": ["check"],
    "m2l-table": ["check"],
    "hetero2d": ["check"],
    "prism": ["m2l-table", "hetero2d"],
    "assemble": ["prism"],
}


def stage_name(stage, j=None, L=None):
    if stage in ("prism", "assemble"):
        return f"{stage}_j{int(j)}"
    if stage == "strip":
        return f"strip_L{float(L):g}"
    return stage


def stage_hash(cfg: RunConfig, stage, **args):
    """Input hash of ``stage``: its own keys, its arguments and the hashes of its upstream stages."""
    up = {}
    for u in UPSTREAM[stage]:
        up[u] = stage_hash(cfg, u, **({"j": args["j"]} if u == "prism" else {}))
    extra = {"stage": stage, "args": {k: v for k, v in sorted(args.items())}, "upstream": up}
    return cfg.digest(STAGE_KEYS[stage], extra)


def _potential(cfg):
    return make_potential(cfg["potential.family"], float(cfg["potential.alpha"]), float(cfg["potential.gamma"]),
                          tuple(tuple(c) for c in cfg["potential.coeffs"]))


def _opts(cfg, grad_tol=None):
    return MinimizeOptions(max_iter=int(cfg["opt.max_iter"]), grad_tol=float(grad_tol or cfg["opt.grad_tol"]),
                           memory=int(cfg["opt.memory"]))


def _n_nodes(X, h):
    n = int(round(2.0 * X / h)) + 1
    if abs((n - 1) * h - 2.0 * X) > 1e-9 * X:
        raise ConfigError(f"spacing {h} does not divide the interval [-{X}, {X}]")
    return n


def _digest_array(a):
    return hashlib.sha256(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes()).hexdigest()


class Pipeline:
    """Runs stages against one output directory and manifest."""

    def __init__(self, cfg: RunConfig, out_dir=None):
        self.cfg = cfg
        self.out_dir = out_dir or cfg["run.out_dir"]
        os.makedirs(self.out_dir, exist_ok=True)
        self.manifest = StageManifest.load(self.out_dir)
        self.p = _potential(cfg)

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def _require(self, stage, **args):
        return self.manifest.require(stage_name(stage, **args), stage_hash(self.cfg, stage, **args))

    def _is_current(self, stage, **args):
        try:
            self._require(stage, **args)
            return True
        except DependencyError:
            return False

    def _record(self, stage, outputs, summary, timer, **args):
        name = stage_name(stage, **args)
        up = {u: stage_hash(self.cfg, u, **({"j": args["j"]} if u == "prism" else {})) for u in UPSTREAM[stage]}
        self.manifest.record(name, stage_hash(self.cfg, stage, **args), outputs, summary, timer.elapsed, up)
        return self.manifest.stages[name]

    # ------------------------------------------------------------------
    # loaders for upstream outputs
    # ------------------------------------------------------------------
    def _load_minimizers(self):
        d = load_npz(self.path("heteroclinic.npz"))
        X = float(d["X"])
        profiles = [Profile1D(X, v) for v in d["profiles"]]
        return MinimizerSet(profiles, list(d["energies"]), list(d["grad_norms"]), [bool(s) for s in d["scalar"]],
                            list(d["q2_at_0"]))

    def _branch_sign(self):
        """Sign of q2(0) of the profile selected by ``hetero.q_index`` among the minimal ones."""
        ms = self._load_minimizers()
        order = sorted(ms.least(), key=lambda i: -ms.q2_at_0[i])
        k = int(self.cfg["hetero.q_index"])
        if not 0 <= k < len(order):
            raise ConfigError(f"hetero.q_index {k} out of range; {len(order)} minimal profiles")
        return float(np.sign(ms.q2_at_0[order[k]]))

    def _coarse_1d(self, X, h, sign):
        """1D minimal level and the branch with the requested sign of q2(0) on a stage-specific grid."""
        n = _n_nodes(X, h)
        ms = find_heteroclinics(self.p, X, n, opts=_opts(self.cfg))
        cand = [i for i in ms.least() if np.sign(ms.q2_at_0[i]) == sign and not ms.scalar_flags[i]]
        if not cand:
            raise SolverFailure(f"no nonscalar minimal profile with the selected branch on the grid X={X}, h={h}")
        q = ms.profiles[cand[0]]
        return ms.level, q, scalar_connection(self.p, X, n, _opts(self.cfg)).energy

    # ------------------------------------------------------------------
    # stages
    # ------------------------------------------------------------------
    def heteroclinic(self):
        cfg = self.cfg
        with Timer() as t:
            X = float(cfg["one_dim.X"])
            n = _n_nodes(X, float(cfg["one_dim.h"]))
            ms = find_heteroclinics(self.p, X, n, opts=_opts(cfg), dedup=float(cfg["one_dim.dedup"]))
            wc = well_constants(self.p)
            fits = []
            for i in ms.least():
                try:
                    fits.append(check_decay(ms.profiles[i], wc.lambda_min_plus, self.p, wc.delta_bar))
                except FitError as exc:  # window may be empty on very short intervals
                    logger.warning("decay fit skipped for profile %d: %s", i, exc)
            x = ms.profiles[0].x
            cols = [x]
            header = ["x"]
            for i, q in enumerate(ms.profiles):
                cols += [q.values[:, 0], q.values[:, 1]]
                header += [f"q1_{i}", f"q2_{i}"]
            out = [
                write_array_csv(self.path("heteroclinic_profiles.csv"), header, np.stack(cols, axis=1)),
                save_npz(self.path("heteroclinic.npz"), X=np.array(X),
                         profiles=np.stack([q.values for q in ms.profiles]), energies=np.array(ms.energies),
                         grad_norms=np.array(ms.grad_norms), scalar=np.array(ms.scalar_flags),
                         q2_at_0=np.array(ms.q2_at_0)),
            ]
            summary = dict(ms.summary())
            summary.update({
                "n_critical": len(ms.profiles),
                "energies": list(ms.energies),
                "scalar": list(ms.scalar_flags),
                "equipartition": [equipartition(self.p, q) for q in ms.profiles],
                "decay_rate": [f.rate for f in fits],
                "decay_T_fit": [f.T_fit for f in fits],
                "decay_asymptotic_rate": wc.lambda_min_plus ** 0.5,
            })
            out.append(write_json(self.path("heteroclinic_summary.json"), summary))
        return self._record("heteroclinic", out, summary, t)

    def spectrum(self):
        self._require("heteroclinic")
        cfg = self.cfg
        with Timer() as t:
            ms = self._load_minimizers()
            sr = spectral_report(self.p, ms)
            probe = quadratic_growth_probe(self.p, ms, sr.omega_min if sr.omega_min > 0 else 0.0,
                                           n_probes=int(cfg["one_dim.n_probes"]), seed=int(cfg["run.seed"]))
            x = ms.profiles[0].x
            header = ["x"]
            cols = [x]
            for i, v in enumerate(sr.eigenvectors):
                cols += [v.values[:, 0], v.values[:, 1]]
                header += [f"h1_{i}", f"h2_{i}"]
            out = [
                write_array_csv(self.path("spectrum_eigenvectors.csv"), header, np.stack(cols, axis=1)),
                write_csv(self.path("spectrum.csv"), ["index", "energy", "omega_star"],
                          [(i, e, w) for i, (e, w) in enumerate(zip(ms.energies, sr.omega_star))]),
            ]
            summary = {
                "omega_star": list(sr.omega_star),
                "omega_min_minimal": min(sr.omega_star[i] for i in ms.least()),
                "growth_probe_passed": probe.passed,
                "growth_probe_violations": len(probe.violations),
            }
            out.append(write_json(self.path("spectrum_summary.json"), summary))
        return self._record("spectrum", out, summary, t)

    def check(self):
        """Hypotheses plus certificate; raises :class:`CertificateFailure` when either fails."""
        if not self._is_current("heteroclinic"):
            self.heteroclinic()
        if not self._is_current("spectrum"):
            self.spectrum()
        cfg = self.cfg
        with Timer() as t:
            hyp = validate_hypotheses(self.p, int(cfg["potential.samples"]))
            ms = self._load_minimizers()
            d = load_npz(self.path("heteroclinic.npz"))
            with open(self.path("spectrum.csv")) as fh:
                next(fh)
                omegas = [float(line.split(",")[2]) for line in fh if line.strip()]
            cert = certify_conditions(ms, SpectralReport(omegas, []), float(cfg["check.tol"]))
            lines = hyp.lines() + cert.lines()
            with open(self.path("check_report.txt"), "w") as fh:
                fh.write("\n".join(lines) + "\n")
            summary = {
                "hypotheses": hyp.passed,
                "star": cert.star,
                "star_star": cert.star_star,
                "q2_margin": cert.q2_margin,
                "omega_margin": cert.omega_margin,
                "m1": ms.m1,
                "n_minimal": len(ms.least()),
                "passed": bool(hyp.all_passed and cert.passed),
                "profiles_digest": _digest_array(d["profiles"]),
            }
            out = [self.path("check_report.txt"), write_json(self.path("check_summary.json"), summary)]
        if not summary["passed"]:
            # recorded under a failing entry so downstream stages refuse to start
            self.manifest.stages.pop("check", None)
            self.manifest.save()
            raise CertificateFailure(lines)
        self._record("check", out, summary, t)
        return lines

    def strip(self, L=None):
        cfg = self.cfg
        L = float(cfg["strip.L"] if L is None else L)
        self._require("check")
        with Timer() as t:
            level, q, _ = self._coarse_1d(float(cfg["strip.X"]), float(cfg["strip.h"]), self._branch_sign())
            sol = solve_PL2(self.p, level, L, q, float(cfg["strip.h"]), _opts(cfg))
            v = sol.field
            XX, YY = np.meshgrid(v.x, v.y, indexing="ij")
            tag = f"L{L:g}"
            out = [write_array_csv(self.path(f"strip_{tag}_field.csv"), ["x", "y", "v1", "v2"],
                                   np.stack([XX.ravel(), YY.ravel(), v.values[..., 0].ravel(),
                                             v.values[..., 1].ravel()], axis=1))]
            summary = {"L": L, "m2L": sol.energy, "grad_norm": sol.grad_norm, "sup_norm": v.sup_norm(),
                       "symmetry_defect": v.symmetry_defect()}
            out.append(write_json(self.path(f"strip_{tag}_summary.json"), summary))
        return self._record("strip", out, summary, t, L=L)

    def m2l(self):
        cfg = self.cfg
        self._require("check")
        with Timer() as t:
            h = float(cfg["strip.h"])
            level, q, sc = self._coarse_1d(float(cfg["strip.X"]), h, self._branch_sign())
            tab = m2l_table(self.p, level, cfg["strip.L_list"], q, sc, hy=h, opts=_opts(cfg), keep_fields=False)
            out = [
                write_csv(self.path("m2l_table.csv"), ["L", "m2L", "gap", "fit"], list(tab.rows())),
                save_npz(self.path("m2l_table.npz"), Ls=tab.Ls, values=tab.values,
                         fit=np.array([tab.fit.m2, tab.fit.rate, tab.fit.prefactor, tab.fit.r_squared]),
                         m1=np.array(level.value), scalar_gap=np.array(tab.scalar_gap)),
            ]
            summary = {
                "m1_strip_grid": level.value,
                "m2": tab.m2,
                "fit_rate": tab.fit.rate,
                "fit_slope": tab.fit.slope,
                "fit_prefactor": tab.fit.prefactor,
                "fit_r_squared": tab.fit.r_squared,
                "monotone_defect": tab.monotone_defect(),
                "table_digest": _digest_array(tab.values),
                "scalar_gap": tab.scalar_gap,
            }
            out.append(write_json(self.path("m2l_summary.json"), summary))
        return self._record("m2l-table", out, summary, t)

    def hetero2d(self):
        cfg = self.cfg
        self._require("check")
        with Timer() as t:
            h = float(cfg["strip.h"])
            level, q, _ = self._coarse_1d(float(cfg["strip.X"]), h, self._branch_sign())
            sol = solve_hetero2d(self.p, level, q, float(cfg["hetero.Y"]), h, _opts(cfg))
            v = sol.field
            dec = check_2d_decay(v, q)
            XX, YY = np.meshgrid(v.x, v.y, indexing="ij")
            out = [
                write_array_csv(self.path("hetero2d_field.csv"), ["x", "y", "v1", "v2"],
                                np.stack([XX.ravel(), YY.ravel(), v.values[..., 0].ravel(),
                                          v.values[..., 1].ravel()], axis=1)),
                write_array_csv(self.path("hetero2d_decay.csv"), ["y", "l2_dist", "sup_dist"],
                                np.stack([dec.y, dec.l2, dec.sup], axis=1)),
            ]
            summary = {
                "energy": sol.energy,
                "grad_norm": sol.grad_norm,
                "midline_distance": midline_distance(v, q),
                "half_separation": 0.5 * l2_distance(q, q.bar()),
                "decay_rate": dec.rate,
                "decay_prefactor": dec.prefactor,
                "decay_r_squared": dec.r_squared,
            }
            out.append(write_json(self.path("hetero2d_summary.json"), summary))
        return self._record("hetero2d", out, summary, t)

    def prism(self, j):
        cfg = self.cfg
        j = int(j)
        self._require("m2l-table")
        self._require("hetero2d")
        with Timer() as t:
            grid = PrismGrid(j, X=float(cfg["prism.X"]), Z=float(cfg["prism.Z"]), hx=float(cfg["prism.hx"]),
                             hy=float(cfg["prism.hy"]), hz=float(cfg["prism.hz"]))
            level, q, sc = self._coarse_1d(grid.X, grid.hx, self._branch_sign())
            tab = prism_table(self.p, level, q, grid, sc, opts=_opts(cfg))
            Y = max(grid.Jmax * grid.hy, float(cfg["hetero.Y"]))
            Y = int(np.ceil(Y / grid.hy - 1e-9)) * grid.hy
            vq = solve_hetero2d(self.p, level, q, Y, grid.hy, _opts(cfg)).field
            sol = solve_prism(self.p, grid, level, tab, vq, _opts(cfg, cfg["prism.grad_tol"]),
                              neumann_cap=cfg["prism.cap"] == "neumann")
            rep = slice_diagnostics(self.p, level, tab, sol.field, vq)
            far = check_far_field(sol.field)
            m = grid.mask()
            idx = np.argwhere(m)
            vals = sol.field.values[m]
            tag = f"j{j}"
            out = [
                write_array_csv(self.path(f"prism_{tag}_field.csv"), ["x", "y", "z", "u1", "u2"],
                                np.column_stack([idx[:, 0] * grid.hx, idx[:, 1] * grid.hy, idx[:, 2] * grid.hz,
                                                 vals])),
                write_array_csv(self.path(f"prism_{tag}_slices.csv"), ["z", "l2_dist", "sup_dist", "gap"],
                                np.stack([rep.z, rep.l2, rep.sup, rep.gap], axis=1)),
                save_npz(self.path(f"prism_{tag}.npz"), values=sol.field.values, q=q.values,
                         grid=np.array([j, grid.X, grid.Z, grid.hx, grid.hy, grid.hz, grid.z_floor])),
            ]
            up = self.manifest.stages["m2l-table"]["summary"]
            summary = {
                "j": j,
                "energy": sol.energy,
                "m3_proxy": sol.energy,
                "grad_norm": sol.grad_norm,
                "n_iter": sol.n_iter,
                "converged": sol.converged,
                "m1_prism_grid": level.value,
                "m2_prism_table": tab.m2,
                "m2_strip_table": up["m2"],
                "min_slice_gap": float(np.min(rep.gap)),
                "far_field_rate": far.rate,
                "far_field_maxdev": list(far.maxdev),
                "top_slice_sup_dist": float(rep.sup[-2]) if len(rep.sup) > 1 else 0.0,
            }
            out.append(write_json(self.path(f"prism_{tag}_summary.json"), summary))
        return self._record("prism", out, summary, t, j=j)

    def load_assembly(self, j, clamp_z=False):
        d = load_npz(self.path(f"prism_j{int(j)}.npz"))
        jj, X, Z, hx, hy, hz, zf = d["grid"]
        grid = PrismGrid(int(jj), X=X, Z=Z, hx=hx, hy=hy, hz=hz, z_floor=zf)
        return ReflectionAssembly(int(j), Field3D(grid, d["values"]), Profile1D(X, d["q"]), clamp_z)

    def assemble(self, j, resolution=None):
        cfg = self.cfg
        j = int(j)
        self._require("prism", j=j)
        res = int(cfg["assemble.resolution"] if resolution is None else resolution)
        with Timer() as t:
            asm = self.load_assembly(j)
            rep = check_assembly(asm, n_samples=int(cfg["assemble.samples"]), seed=int(cfg["run.seed"]))
            X, Z = asm.field.grid.X, asm.Z
            r = Z / np.sqrt(2.0)
            box = ((-X, X), (-r, r), (-r, r))
            tag = f"j{j}"
            out = [export_field3d(asm, self.path(f"assembled_{tag}.vtk"), box, res)]
            rows = [(k, float(rho), float(d)) for k, ds in rep.ray_distance.items() for rho, d in zip(rep.rho, ds)]
            out.append(write_csv(self.path(f"assembly_{tag}_midray.csv"), ["k", "rho", "sup_dist"], rows))
            with open(self.path(f"assembly_{tag}_report.txt"), "w") as fh:
                fh.write("\n".join(rep.lines()) + "\n")
            out.append(self.path(f"assembly_{tag}_report.txt"))
            far = np.array([d[-1] for d in rep.ray_distance.values()])
            near = np.array([d[0] for d in rep.ray_distance.values()])
            summary = {
                "j": j,
                "periodicity": rep.periodicity,
                "face_jump": rep.face_jump,
                "interp_error": rep.interp_error,
                "midray_far_max": float(far.max()),
                "midray_near_min": float(near.min()),
                "resolution": res,
            }
            out.append(write_json(self.path(f"assembly_{tag}_summary.json"), summary))
        return self._record("assemble", out, summary, t, j=j)

    def plot(self):
        from . import plots

        with Timer() as t:
            written = self._plots(plots)
        self.manifest.record("plot", self.cfg.digest(["run.seed", "run.stages"], {"stage": "plot"}), written,
                             {"n_plots": len(written)}, t.elapsed)
        return written

    def _plots(self, plots):
        written = []
        st = self.manifest.stages
        if "heteroclinic" in st:
            ms = self._load_minimizers()
            idx = ms.least()
            written.append(plots.plot_profiles(self.path("profiles.svg"), ms.profiles[0].x,
                                               [ms.profiles[i].values for i in idx], [f"#{i}" for i in idx]))
        else:
            logger.warning("no heteroclinic output; skipping profile plot")
        if "m2l-table" in st:
            d = load_npz(self.path("m2l_table.npz"))
            m2, rate, pref, _ = d["fit"]
            written.append(plots.plot_table(self.path("m2l_table.svg"), d["Ls"], d["values"], m2, rate, pref))
        else:
            logger.warning("no strip table; skipping table plot")
        if "hetero2d" in st:
            _, a = read_array_csv(self.path("hetero2d_decay.csv"))
            s = st["hetero2d"]["summary"]
            written.append(plots.plot_decay(self.path("hetero2d_decay.svg"), a[:, 0], a[:, 1], a[:, 2],
                                            s["decay_rate"], s["decay_prefactor"]))
        for name in sorted(st):
            if name.startswith("prism_j"):
                _, a = read_array_csv(self.path(f"{name}_slices.csv"))
                written.append(plots.plot_decay(self.path(f"{name}_slices.svg"), a[:, 0], a[:, 1], a[:, 2],
                                                xlabel="z"))
            if name.startswith("assemble_j"):
                j = name.split("_j")[1]
                _, rows = read_csv(self.path(f"assembly_j{j}_midray.csv"))
                dist, rho = {}, []
                for k, r, d in rows:
                    dist.setdefault(int(k), []).append(float(d))
                    if int(k) == 0:
                        rho.append(float(r))
                written.append(plots.plot_midray(self.path(f"assembly_j{j}_midray.svg"), rho, dist))
        return [w for w in written if w]

    def run_all(self, stages=None, js=None):
        stages = list(self.cfg["run.stages"] if stages is None else stages)
        js = list(self.cfg["prism.j"] if js is None else js)
        for s in stages:
            logger.info("stage %s", s)
            if s == "heteroclinic":
                self.heteroclinic()
            elif s == "spectrum":
                self.spectrum()
            elif s == "check":
                self.check()
            elif s == "strip":
                self.strip()
            elif s == "m2l-table":
                self.m2l()
            elif s == "hetero2d":
                self.hetero2d()
            elif s == "prism":
                for j in js:
                    self.prism(j)
            elif s == "assemble":
                for j in js:
                    self.assemble(j)
            elif s == "plot":
                self.plot()
            else:
                raise ConfigError(f"unknown stage {s!r}")
        return self.manifest


def run_pipeline(cfg: RunConfig, out_dir=None) -> StageManifest:
    return Pipeline(cfg, out_dir).run_all()


def emit_plots(cfg: RunConfig, out_dir=None):
    return Pipeline(cfg, out_dir).plot()


__all__ = ["CertificateFailure", "Pipeline", "run_pipeline", "emit_plots", "stage_hash", "stage_name"]
