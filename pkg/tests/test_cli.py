import csv
import json

import numpy as np
import pytest

from geovox import cli
from geovox import shapes as S
from geovox.grids import read_grid


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


# ------------------------------------------------------------------- synth

def test_synth_torus(tmp_path):
    out = tmp_path / "torus.obj"
    assert run("synth", "torus", "--R", 10, "--r", 4, "-o", out) == 0
    m = S.read_obj(out)
    assert len(m.faces) == 512
    assert len(S.read_xyz(out.with_suffix(".xyz"))) == 512


def test_synth_sphere_gap_is_watertight(tmp_path):
    out = tmp_path / "gap.obj"
    assert run("synth", "sphere-gap", "--radius", 10, "--gap", 60, "--depth", 3, "-o", out) == 0
    assert S.read_obj(out).is_watertight()


def test_synth_bump_sequence(tmp_path):
    assert run("synth", "bump-sequence", "--frames", 3, "--amp", 2, "-o", tmp_path / "seq") == 0
    assert sorted(p.name for p in (tmp_path / "seq").iterdir()) == [
        "frame_000.obj", "frame_001.obj", "frame_002.obj"]


@pytest.mark.parametrize("argv", [
    ["synth", "nosuch", "-o", "x.obj"],
    ["synth", "torus"],
    ["feature", "missing.obj", "-o", "out"],
    ["feature", "missing.obj", "-o", "out", "--spacing", "-1"],
    ["covfeat", "missing.xyz", "-o", "x.csv", "--bogus"],
    ["frobnicate"],
])
def test_usage_errors_exit_2(tmp_path, monkeypatch, argv):
    monkeypatch.chdir(tmp_path)
    assert run(*argv) == 2


def test_invalid_generator_parameters_exit_2(tmp_path):
    assert run("synth", "torus", "--R", 4, "--r", 10, "-o", tmp_path / "t.obj") == 2


# ----------------------------------------------------------------- feature

@pytest.fixture(scope="module")
def sphere_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("feat")
    S.write_obj(S.gen_ellipsoid(10, 10, 10), d / "sphere.obj")
    rc = run("feature", d / "sphere.obj", "-o", d / "out", "--dump-intermediates")
    return rc, d / "out"


def test_feature_sphere_outputs(sphere_run):
    rc, out = sphere_run
    assert rc == 0
    header, data = read_csv(out / "features.csv")
    assert header == ["vertex_index", "x", "y", "z", "value"]
    assert data[:, 4].std() / data[:, 4].mean() < 0.05
    for name in ("mask", "inner", "h", "L0", "L1", "G", "feat"):
        assert (out / f"{name}.vgf").is_file()
    rep = json.loads((out / "report.json").read_text())
    for key in ("iterations", "residual", "stagnant_count", "R", "center"):
        assert key in rep
    assert rep["status"] == "ok" and rep["config_source"]["spacing"] == "default"
    assert (out / "feature_mesh.obj").is_file() and (out / "feature_mesh.csv").is_file()


def test_dumped_fields_are_consistent(sphere_run):
    _, out = sphere_run
    L0, L1, G = (read_grid(out / f"{n}.vgf").values for n in ("L0", "L1", "G"))
    assert np.array_equal(G, L0 + L1)
    feat = read_grid(out / "feat.vgf").values
    rep = json.loads((out / "report.json").read_text())
    inside = feat > 0
    assert np.allclose(feat[inside], rep["R"] / G[inside])


def test_feature_torus_polarity(tmp_path):
    S.write_obj(S.gen_torus(12, 5, 48, 24), tmp_path / "t.obj")
    assert run("feature", tmp_path / "t.obj", "-o", tmp_path / "o") == 0
    _, data = read_csv(tmp_path / "o" / "features.csv")
    rho = np.hypot(data[:, 1], data[:, 2])
    eq = np.abs(data[:, 3]) < 1.0
    assert data[eq & (rho > 16), 4].mean() > data[eq & (rho < 8), 4].mean()


def test_config_precedence(tmp_path):
    S.write_obj(S.gen_ellipsoid(6, 6, 6, 16, 8), tmp_path / "s.obj")
    (tmp_path / "c.toml").write_text("[feature]\nspacing = 1.0\ntol = 0.25\n")
    assert run("--config", tmp_path / "c.toml", "feature", tmp_path / "s.obj",
               "-o", tmp_path / "o", "--spacing", 0.9) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["config"]["spacing"] == 0.9 and rep["config_source"]["spacing"] == "flag"
    assert rep["config"]["tol"] == 0.25 and rep["config_source"]["tol"] == "config"
    assert rep["config_source"]["closing"] == "default"
    (tmp_path / "bad.toml").write_text("[feature]\nnope = 1\n")
    assert run("--config", tmp_path / "bad.toml", "feature", tmp_path / "s.obj", "-o", tmp_path / "p") == 2


def test_non_convergence_exits_3_with_partial_dump(tmp_path):
    S.write_obj(S.gen_ellipsoid(6, 6, 6, 16, 8), tmp_path / "s.obj")
    rc = run("feature", tmp_path / "s.obj", "-o", tmp_path / "o", "--max-iters", 3, "--dump-intermediates")
    assert rc == 3
    assert (tmp_path / "o" / "h.vgf").is_file()
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["status"] == "laplace_not_converged"


# ----------------------------------------------------------------- covfeat

def test_covfeat_plane_patch(tmp_path):
    g = np.stack(np.meshgrid(np.arange(8.0), np.arange(8.0), indexing="ij"), -1).reshape(-1, 2)
    S.write_xyz(np.column_stack([g, np.zeros(len(g))]), tmp_path / "p.xyz")
    assert run("covfeat", tmp_path / "p.xyz", "--k", 4, "-o", tmp_path / "f.csv") == 0
    header, data = read_csv(tmp_path / "f.csv")
    assert header[-1] == "curvature"
    interior = (data[:, 1] > 0) & (data[:, 1] < 7) & (data[:, 2] > 0) & (data[:, 2] < 7)
    assert np.abs(data[interior, -1]).max() < 1e-12


def test_covfeat_rejects_small_k(tmp_path):
    S.write_xyz(np.random.default_rng(0).normal(size=(10, 3)), tmp_path / "p.xyz")
    assert run("covfeat", tmp_path / "p.xyz", "--k", 2, "-o", tmp_path / "f.csv") == 2
    assert run("covfeat", tmp_path / "p.xyz", "--k", 0, "-o", tmp_path / "f.csv") == 2


# ------------------------------------------------------------------- track

def test_track_static_sequence(tmp_path):
    frames = tmp_path / "frames"
    frames.mkdir()
    mesh = S.gen_ellipsoid(8, 6, 5, 12, 8)
    for t in range(3):
        S.write_obj(mesh, frames / f"f{t}.obj")
    assert run("track", frames, "-o", tmp_path / "o") == 0
    diag = json.loads((tmp_path / "o" / "diagnostics.json").read_text())
    assert [d["frame"] for d in diag["per_frame"]] == [1, 2]
    assert all(d["error"] < 1e-3 for d in diag["per_frame"])
    for t in range(3):
        assert np.array_equal(S.read_obj(tmp_path / "o" / f"frame_{t:03d}.obj").faces, mesh.faces)


def test_track_needs_two_frames(tmp_path):
    (tmp_path / "frames").mkdir()
    S.write_obj(S.gen_ellipsoid(8, 6, 5, 12, 8), tmp_path / "frames" / "a.obj")
    assert run("track", tmp_path / "frames", "-o", tmp_path / "o") == 2
    assert run("track", tmp_path / "nothere", "-o", tmp_path / "o") == 2


# ----------------------------------------------------------------- analyze

def _value_csv(path, values):
    path.write_text("vertex_index,value\n" + "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(values)))


def test_analyze_correlate_single_frame(tmp_path):
    _value_csv(tmp_path / "f0.csv", [1.0, 2.0, 4.0])
    assert run("analyze", "correlate", tmp_path / "f0.csv", "-o", tmp_path / "r.csv") == 0
    assert (tmp_path / "r.csv").read_text() == "frame,r_t\n0,1.0\n"


def test_analyze_modes(tmp_path):
    mesh = S.gen_torus(10, 4, 8, 8)
    S.write_obj(mesh, tmp_path / "ref.obj")
    S.write_obj(mesh.with_vertices(mesh.vertices * 2), tmp_path / "big.obj")
    assert run("analyze", "elongation", tmp_path / "ref.obj", tmp_path / "big.obj",
               "-o", tmp_path / "e.csv", "--svg", tmp_path / "e.svg") == 0
    _, e = read_csv(tmp_path / "e.csv")
    assert np.allclose(e[:, 1], 1.5) and (tmp_path / "e.svg").is_file()

    rng = np.random.default_rng(0)
    frames = [rng.normal(size=64) for _ in range(3)]
    for t, f in enumerate(frames):
        _value_csv(tmp_path / f"v{t}.csv", f)
    inputs = [tmp_path / f"v{t}.csv" for t in range(3)]
    assert run("analyze", "difference", *inputs, "--frame", 2, "-o", tmp_path / "d.csv") == 0
    _, d = read_csv(tmp_path / "d.csv")
    assert np.allclose(d[:, 1], frames[2] - frames[0])
    assert run("analyze", "curve", *inputs, "--mesh", tmp_path / "ref.obj", "--vertex", 9,
               "-o", tmp_path / "c.csv") == 0
    meta = json.loads((tmp_path / "c.json").read_text())
    assert len(meta["ring"]) == 8
    assert run("analyze", "difference", *inputs, "-o", tmp_path / "d.csv") == 2
    assert run("analyze", "curve", *inputs, "-o", tmp_path / "c.csv") == 2
