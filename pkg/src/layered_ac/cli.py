"""Command line entry point ``layered-ac``.

Exit codes: 0 success, 1 usage error, 2 hypothesis or certificate failure,
3 solver failure, 4 I/O, configuration or stale-dependency error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, RunConfig
from .one_dim import FitError, GridMismatchError, SolverFailure
from .optimize import DivergenceError, EigenConvergenceError, StallError
from .persist import DependencyError
from .pipeline import CertificateFailure, Pipeline
from .prism3d import GridError
from .strip2d import TableError

logger = logging.getLogger("layered_ac")

EXIT_OK, EXIT_USAGE, EXIT_CERT, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4
SOLVER_ERRORS = (SolverFailure, TableError, StallError, DivergenceError, EigenConvergenceError, GridError, FitError,
                 GridMismatchError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--out-dir", help="output directory (overrides run.out_dir)")
    common.add_argument("--seed", type=int, help="seed for random probes and samples")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="layered-ac", description="Layered solutions of a vector Allen-Cahn system.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("check", parents=[common], help="sampled hypotheses and the (*)/(**) certificate")
    sub.add_parser("heteroclinic", parents=[common], help="minimal 1D connections")
    sub.add_parser("spectrum", parents=[common], help="second-variation gaps of the 1D minimisers")
    s = sub.add_parser("strip", parents=[common], help="Neumann strip problem at one half-width")
    s.add_argument("--L", type=float, help="half-width of the strip")
    sub.add_parser("m2l-table", parents=[common], help="strip levels over strip.L_list with the gap fit")
    s = sub.add_parser("hetero2d", parents=[common], help="planar heteroclinic-type solution")
    s.add_argument("--q-index", type=int, help="which minimal profile to connect (0: q2(0) > 0)")
    s = sub.add_parser("prism", parents=[common], help="minimiser on the prism of order j")
    s.add_argument("--j", type=int, help="symmetry order (default: every entry of prism.j)")
    s.add_argument("--Z", type=float, help="prism height")
    s = sub.add_parser("assemble", parents=[common], help="tile space and check the assembled field")
    s.add_argument("--j", type=int, help="symmetry order (default: every entry of prism.j)")
    s.add_argument("--resolution", type=int, help="nodes per axis of the volumetric export")
    s = sub.add_parser("run-all", parents=[common], help="every stage listed in run.stages")
    s.add_argument("--j", type=int, help="restrict prism and assembly to this order")
    sub.add_parser("plot", parents=[common], help="SVG figures from existing outputs")
    return parser


def _config(args):
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    over = {"run.seed": args.seed, "run.out_dir": args.out_dir}
    if getattr(args, "q_index", None) is not None:
        over["hetero.q_index"] = args.q_index
    if getattr(args, "Z", None) is not None:
        over["prism.Z"] = args.Z
    return cfg.override(**over)


def _run(args):
    cfg = _config(args)
    pipe = Pipeline(cfg)
    js = [args.j] if getattr(args, "j", None) is not None else cfg["prism.j"]
    cmd = args.command
    if cmd == "check":
        for line in pipe.check():
            print(line)
    elif cmd == "heteroclinic":
        st = pipe.heteroclinic()
        print(f"m1 = {st['summary']['m1']:.12g} ({st['summary']['n_minimal']} minimal profiles)")
    elif cmd == "spectrum":
        st = pipe.spectrum()
        print("omega* = " + ", ".join(f"{w:.6g}" for w in st["summary"]["omega_star"]))
    elif cmd == "strip":
        st = pipe.strip(args.L)
        print(f"m_2,L = {st['summary']['m2L']:.12g} at L = {st['summary']['L']:g}")
    elif cmd == "m2l-table":
        s = pipe.m2l()["summary"]
        print(f"m2 = {s['m2']:.10g}, fitted slope {s['fit_slope']:.6g}, R^2 {s['fit_r_squared']:.6f}")
    elif cmd == "hetero2d":
        s = pipe.hetero2d()["summary"]
        print(f"energy {s['energy']:.10g}, mid-line distance {s['midline_distance']:.6g}, "
              f"slice decay rate {s['decay_rate']:.6g}")
    elif cmd == "prism":
        for j in js:
            s = pipe.prism(j)["summary"]
            print(f"j={j}: energy {s['energy']:.10g}, |grad| {s['grad_norm']:.3e}")
    elif cmd == "assemble":
        for j in js:
            s = pipe.assemble(j, args.resolution)["summary"]
            print(f"j={j}: periodicity {s['periodicity']:.3e}, face jump {s['face_jump']:.3e}, "
                  f"far mid-ray distance {s['midray_far_max']:.3e}")
    elif cmd == "run-all":
        pipe.run_all(js=js)
        print(f"all stages done; manifest at {pipe.manifest.path}")
    elif cmd == "plot":
        for path in pipe.plot():
            print(path)
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except CertificateFailure as exc:
        print("\n".join(exc.lines))
        return EXIT_CERT
    except SOLVER_ERRORS as exc:
        logger.error("solver failure: %s", exc)
        return EXIT_SOLVER
    except (OSError, DependencyError, ConfigError) as exc:
        logger.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
