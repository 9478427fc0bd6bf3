import json
import logging
import os

import numpy as np
import pytest

from layered_ac import plots
from layered_ac.cli import main
from layered_ac.config import ConfigError, RunConfig
from layered_ac.one_dim import SolverFailure
from layered_ac.persist import DependencyError, StageManifest, load_npz, read_array_csv, read_csv, write_json
from layered_ac.pipeline import Pipeline, stage_hash
from layered_ac.strip2d import TableError

TINY = """\
# small grids for a quick end-to-end run
one_dim.X = 6
one_dim.h = 0.05
one_dim.n_probes = 4
strip.X = 5
strip.h = 0.25
strip.L_list = 0.5, 1, 1.5, 2, 2.5
hetero.Y = 3
prism.j = 2
prism.X = 4
prism.Z = 3
prism.hx = 0.25
prism.hy = 0.3
prism.hz = 0.3
prism.grad_tol = 1e-7
assemble.resolution = 6
assemble.samples = 200
"""


@pytest.fixture(scope="module")
def tiny_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    path.write_text(TINY)
    return str(path)


@pytest.fixture(scope="module")
def runs(tmp_path_factory, tiny_cfg):
    dirs = [str(tmp_path_factory.mktemp(f"run{i}")) for i in range(2)]
    codes = [main(["run-all", "--config", tiny_cfg, "--out-dir", d]) for d in dirs]
    return codes, dirs


# -- config -----------------------------------------------------------------------
def test_config_parsing_and_round_trip():
    cfg = RunConfig.from_text(TINY + "potential.coeffs = 1:0:2.5, 0:1:-1\nrun.stages = heteroclinic, check\n")
    assert cfg["one_dim.X"] == 6
    assert cfg["strip.L_list"] == [0.5, 1, 1.5, 2, 2.5]
    assert cfg["prism.j"] == [2]
    assert cfg["potential.coeffs"] == [(1, 0, 2.5), (0, 1, -1.0)]
    again = RunConfig.from_text(cfg.dumps())
    assert again.values == cfg.values


@pytest.mark.parametrize("text", [
    "nonsense.key = 1",
    "one_dim.h = -0.1",
    "strip.L_list = 2, 1",
    "prism.j = 1",
    "prism.cap = sideways",
    "run.stages = heteroclinic, dance",
    "just words",
    "potential.coeffs = 1:2",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_stage_hash_follows_upstream_keys():
    a = RunConfig()
    b = RunConfig().override(**{"one_dim.h": 0.01})
    c = RunConfig().override(**{"prism.hx": 0.2})
    assert stage_hash(a, "prism", j=2) != stage_hash(b, "prism", j=2)
    assert stage_hash(a, "m2l-table") == stage_hash(c, "m2l-table")
    assert stage_hash(a, "prism", j=2) != stage_hash(c, "prism", j=2)
    assert stage_hash(a, "prism", j=2) != stage_hash(a, "prism", j=3)


# -- manifest -----------------------------------------------------------------------
def test_manifest_require(tmp_path):
    m = StageManifest(str(tmp_path))
    with pytest.raises(DependencyError, match="has not been run"):
        m.require("a", "h")
    f = write_json(tmp_path / "a.json", {"x": 1})
    m.record("a", "h", [f], {"x": 1}, 0.1)
    assert StageManifest.load(str(tmp_path)).require("a", "h")["summary"] == {"x": 1}
    with pytest.raises(DependencyError, match="stale"):
        m.require("a", "other")
    f.write_text('{"x": 2}\n')
    with pytest.raises(DependencyError, match="modified"):
        m.require("a", "h")
    os.remove(f)
    with pytest.raises(DependencyError, match="missing"):
        m.require("a", "h")


# -- end-to-end -----------------------------------------------------------------------
def test_run_all_succeeds(runs):
    codes, dirs = runs
    assert codes == [0, 0]
    st = StageManifest.load(dirs[0]).stages
    for name in ("heteroclinic", "spectrum", "check", "m2l-table", "hetero2d", "prism_j2", "assemble_j2", "plot"):
        assert name in st
    assert st["check"]["summary"]["passed"]
    assert st["check"]["summary"]["n_minimal"] == 2


def test_every_declared_output_parses(runs):
    d = runs[1][0]
    for name, rec in StageManifest.load(d).stages.items():
        assert rec["wall_clock"] >= 0
        for fname in rec["outputs"]:
            path = os.path.join(d, fname)
            if fname.endswith(".csv"):
                header, rows = read_csv(path)
                assert header and rows and all(len(r) == len(header) for r in rows)
            elif fname.endswith(".json"):
                with open(path) as fh:
                    json.load(fh)
            elif fname.endswith(".npz"):
                assert load_npz(path)
            elif fname.endswith(".vtk"):
                text = open(path).read()
                assert "DIMENSIONS 6 6 6" in text and "POINT_DATA 216" in text
            elif fname.endswith(".svg"):
                assert open(path).read().lstrip().startswith("<?xml")
            else:
                assert os.path.getsize(path) > 0


def test_runs_are_deterministic(runs):
    _, (a, b) = runs
    ma, mb = StageManifest.load(a).stages, StageManifest.load(b).stages
    assert ma.keys() == mb.keys()
    for name in ma:
        assert ma[name]["summary"] == mb[name]["summary"]
        assert ma[name]["input_hash"] == mb[name]["input_hash"]
        assert ma[name]["outputs"] == mb[name]["outputs"], name


def test_summary_scalars(runs):
    st = StageManifest.load(runs[1][0]).stages
    m2l = st["m2l-table"]["summary"]
    d = load_npz(os.path.join(runs[1][0], "m2l_table.npz"))
    # the plotted overlay uses the same fitted rate as the manifest
    assert float(d["fit"][1]) == m2l["fit_rate"]
    assert m2l["fit_slope"] == pytest.approx(-m2l["fit_rate"])
    assert len(m2l["table_digest"]) == 64
    assert st["spectrum"]["summary"]["omega_min_minimal"] > 0
    assert st["prism_j2"]["summary"]["m3_proxy"] == st["prism_j2"]["summary"]["energy"]
    a = st["assemble_j2"]["summary"]
    assert a["periodicity"] < 1e-10 and a["face_jump"] < 5 * a["interp_error"]


def test_svgs_byte_identical_on_replot(runs, tiny_cfg):
    d = runs[1][0]
    svgs = sorted(f for f in os.listdir(d) if f.endswith(".svg"))
    assert len(svgs) >= 5
    before = {f: open(os.path.join(d, f), "rb").read() for f in svgs}
    assert main(["plot", "--config", tiny_cfg, "--out-dir", d]) == 0
    for f in svgs:
        assert open(os.path.join(d, f), "rb").read() == before[f]
    other = runs[1][1]
    for f in svgs:
        assert open(os.path.join(other, f), "rb").read() == before[f]


def test_empty_table_plot_skipped_with_warning(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        out = plots.plot_table(str(tmp_path / "t.svg"), [], [], 1.0, 1.0, 1.0)
    assert out is None
    assert not (tmp_path / "t.svg").exists()
    assert "empty" in caplog.text


def test_single_stage_commands(runs, tiny_cfg, capsys):
    d = runs[1][0]
    assert main(["strip", "--config", tiny_cfg, "--out-dir", d, "--L", "1.5"]) == 0
    assert "m_2,L" in capsys.readouterr().out
    _, a = read_array_csv(os.path.join(d, "strip_L1.5_field.csv"))
    assert a.shape[1] == 4 and np.all(np.isfinite(a))
    assert main(["heteroclinic", "--config", tiny_cfg, "--out-dir", d]) == 0
    assert "m1 =" in capsys.readouterr().out


# -- exit codes -----------------------------------------------------------------------
def test_scalar_potential_halts_at_certificate(tmp_path, capsys):
    cfg = tmp_path / "a0.cfg"
    cfg.write_text(TINY + "potential.alpha = 0\npotential.gamma = 1\n")
    assert main(["run-all", "--config", str(cfg), "--out-dir", str(tmp_path / "out")]) == 2
    out = capsys.readouterr().out
    assert "(*)" in out and "fails" in out
    st = StageManifest.load(str(tmp_path / "out")).stages
    assert "check" not in st and "m2l-table" not in st


def test_missing_upstream_is_dependency_error(tmp_path, tiny_cfg):
    assert main(["prism", "--config", tiny_cfg, "--out-dir", str(tmp_path)]) == 4
    assert main(["spectrum", "--config", tiny_cfg, "--out-dir", str(tmp_path)]) == 4


def test_stale_and_modified_upstream(tmp_path, tiny_cfg):
    out = str(tmp_path)
    assert main(["heteroclinic", "--config", tiny_cfg, "--out-dir", out]) == 0
    changed = tmp_path / "changed.cfg"
    changed.write_text(TINY + "one_dim.h = 0.1\n")
    assert main(["spectrum", "--config", str(changed), "--out-dir", out]) == 4
    with open(tmp_path / "heteroclinic_profiles.csv", "a") as fh:
        fh.write("0,0,0\n")
    assert main(["spectrum", "--config", tiny_cfg, "--out-dir", out]) == 4
    with pytest.raises(DependencyError):
        Pipeline(RunConfig.from_file(tiny_cfg), out).spectrum()


def test_usage_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["strip", "--L", "wide"])
    assert exc.value.code == 1


def test_bad_config_exits_four(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("one_dim.h = 0.07\n")
    assert main(["heteroclinic", "--config", str(bad), "--out-dir", str(tmp_path)]) == 4
    assert main(["check", "--config", str(tmp_path / "absent.cfg")]) == 4


@pytest.mark.parametrize("exc", [SolverFailure("no seed converged"), TableError("not monotone")])
def test_solver_failure_exits_three(tmp_path, tiny_cfg, monkeypatch, exc):
    import layered_ac.pipeline as pipeline

    def fail(*args, **kwargs):
        raise exc

    monkeypatch.setattr(pipeline, "find_heteroclinics", fail)
    assert main(["heteroclinic", "--config", tiny_cfg, "--out-dir", str(tmp_path)]) == 3
