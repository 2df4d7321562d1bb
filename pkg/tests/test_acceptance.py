"""End-to-end acceptance checks, one test group per numbered criterion.

Each test carries a ``criterion`` marker; ``conftest.py`` folds the outcomes
into a single PASS/FAIL line per criterion in the terminal summary, together
with the measured quantities recorded through ``record_property``.
"""
import filecmp
import os
import subprocess
import sys
import time

import numba
import numpy as np
import pytest
from scipy import ndimage
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from geovox import covariance as C
from geovox import eulerian as E
from geovox import lddmm as L
from geovox import shapes as S
from geovox import temporal as T
from geovox.grids import BinaryMask
from geovox.pipeline import FeatureConfig, geodesic_feature, shape_mask

from helpers import analytic_h, concentric_config

crit = pytest.mark.criterion


def pearson(a, b):
    return float(np.corrcoef(a, b)[0, 1])


@pytest.fixture
def single_thread():
    before = numba.get_num_threads()
    numba.set_num_threads(1)
    yield
    numba.set_num_threads(before)


@pytest.fixture(scope="module")
def concentric_fields():
    cfg, r = concentric_config()
    return cfg, r, E.compute_fields(cfg)


# ----------------------------------------------------------------------- 1

@crit(1, "Laplace oracle on concentric spheres")
def test_c01_laplace_oracle(single_thread, record_property):
    cfg, r = concentric_config()
    E.solve_laplace(cfg, max_iters=5, raise_on_fail=False)  # JIT warm-up
    t0 = time.perf_counter()
    h, rep = E.solve_laplace(cfg)
    elapsed = time.perf_counter() - t0
    sel = (r >= 5 + 2) & (r <= 13 - 2)
    exact = analytic_h(r[sel])
    err = np.max(np.abs(h.values[sel] - exact) / exact)
    record_property("max_rel_err", f"{err:.4f}")
    record_property("seconds", f"{elapsed:.2f}")
    assert rep.converged
    assert err < 0.02
    assert elapsed < 10.0


# ----------------------------------------------------------------------- 2

@crit(2, "geodesic length oracle on concentric spheres")
def test_c02_thickness_within_tolerance(concentric_fields, record_property):
    cfg, _, fields = concentric_fields
    G = fields.G.values[cfg.region.occupancy]
    frac = np.mean(np.abs(G - 8.0) <= 1.5)
    record_property("frac_within_1.5", f"{frac:.3f}")
    assert frac >= 0.95


@crit(2, "geodesic length oracle on concentric spheres")
def test_c02_l0_monotone_along_streamlines(concentric_fields, record_property):
    cfg, _, fields = concentric_fields
    seeds = np.argwhere(cfg.region.occupancy & ndimage.binary_dilation(cfg.inner.occupancy))
    pick = np.random.default_rng(0).choice(len(seeds), 20, replace=False)
    worst = np.inf
    for s in pick:
        line = E.trace_streamline(fields.T, cfg.region, cfg.region.index_to_world(seeds[s]), step=0.25)
        vals = [E.sample_trilinear_masked(fields.L0, cfg.region.occupancy, p) for p in line]
        assert len(line) > 3
        worst = min(worst, np.diff(vals).min())
    record_property("min_step_dL0", f"{worst:.4f}")
    # trilinear sampling across the cut-cell rim can dip by a few thousandths
    assert worst > -0.01


# ----------------------------------------------------------------------- 3

@crit(3, "sphere constancy")
def test_c03_sphere_constancy(record_property):
    v = geodesic_feature(S.gen_ellipsoid(10, 10, 10)).surface.values
    cv = v.std() / v.mean()
    record_property("std/mean", f"{cv:.4f}")
    assert cv < 0.05


# ----------------------------------------------------------------------- 4

@crit(4, "scale invariance (bump sphere r=10 vs r=20)")
def test_c04_scale_invariance(record_property):
    cfg = FeatureConfig(spacing=0.5)
    vals = [geodesic_feature(S.gen_bump_sphere(r, 0.15 * r, 2), cfg).surface.values for r in (10, 20)]
    corr = pearson(*vals)
    mrd = np.mean(np.abs(vals[0] - vals[1]) / (0.5 * (vals[0] + vals[1])))
    record_property("corr", f"{corr:.4f}")
    record_property("mean_rel_diff", f"{mrd:.4f}")
    assert corr > 0.98
    assert mrd < 0.03


# ----------------------------------------------------------------------- 5

@crit(5, "rotation invariance")
def test_c05_quarter_turns_are_exact(record_property):
    mask = shape_mask(S.gen_ellipsoid(12, 9, 7), FeatureConfig())
    a = E.compute_fields(E.setup_boundaries(mask)).feat.values
    worst = 0.0
    for axes in [(0, 1), (1, 2), (0, 2)]:
        occ = np.ascontiguousarray(np.rot90(mask.occupancy, 1, axes))
        b = E.compute_fields(E.setup_boundaries(BinaryMask(mask.spacing, (0, 0, 0), occupancy=occ))).feat.values
        worst = max(worst, np.abs(np.rot90(a, 1, axes) - b).max())
    record_property("max_abs_diff_90", f"{worst:.1e}")
    assert worst < 1e-9


@crit(5, "rotation invariance")
@pytest.mark.parametrize("mesh, axis", [
    (S.gen_bump_sphere(20, 3, 3), (0, 0, 1)),
    (S.gen_ellipsoid(12, 9, 7), (1, 1, 0)),
], ids=["bump-z", "ellipsoid-xy"])
def test_c05_thirty_degree_rotation(mesh, axis, record_property):
    rot = Rotation.from_rotvec(np.deg2rad(30) * np.asarray(axis, float) / np.linalg.norm(axis))
    a = geodesic_feature(mesh).surface.values
    b = geodesic_feature(mesh.with_vertices(rot.apply(mesh.vertices))).surface.values
    corr = pearson(a, b)
    record_property("corr_30", f"{corr:.3f}")
    assert corr > 0.95


# ----------------------------------------------------------------------- 6

@pytest.mark.slow
@crit(6, "density robustness (eulerian vs covariance curvature)")
def test_c06_density_robustness(record_property):
    r = 40.0
    mesh = S.gen_bump_sphere(r, 0.15 * r, 3, 64, 32)
    dense = S.sample_surface(mesh, 0.5)
    eul, cov = {}, {}
    for cell in (1, 3, 7):
        cloud = S.subsample_by_voxel(dense, cell)
        cfg = FeatureConfig(closing=max(2, cell + 1))
        eul[cell] = geodesic_feature(cloud, cfg, evaluate_at=mesh.vertices).surface.values
        curv = C.pointwise_features(cloud.points, k=4).curvature
        _, nn = cKDTree(cloud.points).query(mesh.vertices)
        cov[cell] = curv[nn]
    for a, b in [(1, 3), (1, 7), (3, 7)]:
        ce, cc = pearson(eul[a], eul[b]), pearson(cov[a], cov[b])
        record_property(f"eul_{a}-{b}", f"{ce:.3f}")
        record_property(f"cov_{a}-{b}", f"{cc:.3f}")
        assert ce > 0.9
        assert cc < ce


# ----------------------------------------------------------------------- 7

@crit(7, "torus polarity and sphere-with-gap")
def test_c07_torus_outer_exceeds_inner(record_property):
    mesh = S.gen_torus(12, 5, 48, 24)
    v = geodesic_feature(mesh).surface.values
    x, y, z = mesh.vertices.T
    rho = np.hypot(x, y)
    eq = np.abs(z) < 1.0
    outer, inner = v[eq & (rho > 16)].mean(), v[eq & (rho < 8)].mean()
    record_property("outer/inner", f"{outer / inner:.2f}")
    assert outer >= 1.2 * inner


@crit(7, "torus polarity and sphere-with-gap")
def test_c07_gap_below_rest(record_property):
    mesh = S.gen_sphere_gap(12, 50, 4)
    v = geodesic_feature(mesh).surface.values
    d = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True)
    gap = np.arccos(np.clip(d[:, 0], -1, 1)) < np.deg2rad(25)
    record_property("gap_mean", f"{v[gap].mean():.3f}")
    record_property("rest_mean", f"{v[~gap].mean():.3f}")
    assert v[gap].mean() < v[~gap].mean()


# ----------------------------------------------------------------------- 8

@crit(8, "covariance identities")
def test_c08_lps_sums_to_one(record_property):
    rng = np.random.default_rng(8)
    A = rng.normal(size=(1000, 3, 3)) * rng.uniform(0.01, 10, size=(1000, 1, 1))
    f = C.eigenfeatures(A @ np.swapaxes(A, 1, 2))
    dev = np.abs(f.linearity + f.planarity + f.sphericity - 1).max()
    record_property("max_dev", f"{dev:.1e}")
    assert dev < 1e-9


@crit(8, "covariance identities")
@pytest.mark.parametrize("lam, expected", [
    ((0, 1, 1), dict(linearity=0, planarity=1, sphericity=0, curvature=0)),
    ((0, 0, 1), dict(linearity=1, planarity=0, sphericity=0, anisotropy=1, curvature=0)),
    ((1, 1, 1), dict(linearity=0, planarity=0, sphericity=1, anisotropy=0, curvature=1 / 3)),
], ids=["plane", "line", "isotropic"])
def test_c08_limit_cases_exact(lam, expected):
    f = C.eigenfeatures(np.diag(np.asarray(lam, float)))
    for name, val in expected.items():
        assert float(getattr(f, name)) == val, name


# ----------------------------------------------------------------------- 9

@crit(9, "LDDMM correctness suite")
def test_c09_lddmm_suite(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)

    # (a) zero momentum leaves every point in place
    q = rng.normal(size=(12, 3)) * 3
    shot = L.shoot(L.ShootingState(q, np.zeros_like(q)))
    pts = rng.normal(size=(40, 3)) * 5
    assert np.array_equal(shot.q[-1], q)
    assert np.array_equal(L.flow(L.ShootingState(q, np.zeros_like(q)), pts), pts)

    # (b) adjoint gradient against central differences on 5-point problems
    worst_grad = 0.0
    for _ in range(5):
        src = rng.normal(size=(5, 3)) * 2
        tgt = src + rng.normal(size=(5, 3)) * 0.7
        prob = L.RegistrationProblem(src, tgt, L.RegistrationSettings(sigma_v=2.0, sigma_w=1.5))
        loss, loss_grad = L.objective(prob, gamma=0.1)
        mu = rng.normal(size=(5, 3)) * 0.3
        _, grad = loss_grad(mu)
        eps, flat = 1e-6, mu.ravel()
        fd = np.array([(loss(flat + e) - loss(flat - e)) / (2 * eps) for e in np.eye(15) * eps])
        worst_grad = max(worst_grad, np.linalg.norm(grad.ravel() - fd) / np.linalg.norm(fd))
    record_property("grad_rel_err", f"{worst_grad:.1e}")
    assert worst_grad < 1e-4

    # (c) Hamiltonian drift and its second-order decay
    q2 = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
    mu2 = np.array([[0, 1.0, 0], [0, -1.0, 0]])
    h0 = L.hamiltonian(q2, mu2, 1.0)
    drift = {}
    for n in (15, 30):
        s = L.shoot(L.ShootingState(q2, mu2, 1.0, n))
        drift[n] = abs(L.hamiltonian(s.q[-1], s.mu[-1], 1.0) - h0) / h0
    record_property("drift15", f"{drift[15]:.1e}")
    record_property("drift_ratio", f"{drift[15] / drift[30]:.2f}")
    assert drift[15] < 1e-3
    assert 3.0 <= drift[15] / drift[30] <= 5.0

    # (d) pure translation of a sphere is recovered
    src = S.gen_ellipsoid(10, 10, 10, 16, 8).vertices
    res = L.register(L.RegistrationProblem(src, src + [5.0, 0, 0]))
    shift = (res.flowed - src).mean(axis=0)
    record_property("shift_err", f"{np.linalg.norm(shift - [5, 0, 0]):.3f}")
    assert np.linalg.norm(shift - [5, 0, 0]) < 0.1

    elapsed = time.perf_counter() - t0
    record_property("seconds", f"{elapsed:.1f}")
    assert elapsed < 60.0


# ---------------------------------------------------------------------- 10

@pytest.mark.slow
@crit(10, "synthetic bump-sphere tracking")
def test_c10_tracking(record_property):
    amps = np.linspace(0.0, 3.0, 10)
    mesh0 = S.gen_bump_sphere(20, 0, 3, 24, 12)
    contours = [S.gen_bump_sphere(20, a, 3, 64, 32).vertices for a in amps]
    assert 250 <= mesh0.n_vertices <= 350 and 1500 <= len(contours[0]) <= 2500

    stamps = [time.perf_counter()]
    traj = L.track_sequence(mesh0, contours, L.RegistrationSettings(max_iters=100),
                            on_frame=lambda *a, **k: stamps.append(time.perf_counter()))
    per_frame = np.diff(stamps)
    final = L.tracking_error(traj.frames[-1], contours[-1])
    record_property("final_error", f"{final:.3f}")
    record_property("max_frame_s", f"{per_frame.max():.1f}")
    assert len(traj.frames) == 10
    for t in range(10):
        assert np.array_equal(traj.mesh(t).faces, mesh0.faces)
    errors = [L.tracking_error(traj.frames[t], contours[t]) for t in range(1, 10)]
    assert max(errors) < 1.0
    assert len(per_frame) == 9 and per_frame.max() < 30.0


# ---------------------------------------------------------------------- 11

@crit(11, "temporal suite")
def test_c11_temporal(record_property):
    rng = np.random.default_rng(11)
    frames = rng.normal(size=(5, 200))
    r = T.pearson_series(T.FeatureSeries(frames))
    assert r[0] == 1.0
    moved = frames.copy()
    moved[1:] = moved[1:] * 3.7 - 12.0
    assert np.allclose(T.pearson_series(T.FeatureSeries(moved)), r, atol=1e-12)

    mesh = S.gen_bump_sphere(10, 2, 3, 32, 16)
    R = Rotation.random(random_state=11).as_matrix()
    rigid = np.abs(T.elongation(mesh, mesh.with_vertices(mesh.vertices @ R.T + [4.0, -2.0, 9.0]))).max()
    s = 1.3
    scaled = np.abs(T.elongation(mesh, mesh.with_vertices(mesh.vertices * s)) - (s * s - 1) / 2).max()
    record_property("rigid_max", f"{rigid:.1e}")
    record_property("scale_max_dev", f"{scaled:.1e}")
    assert rigid < 1e-9
    assert scaled < 1e-9


# ---------------------------------------------------------------------- 12

def _cli(args, cwd, threads):
    env = dict(os.environ, GEOVOX_THREADS=str(threads))
    proc = subprocess.run([sys.executable, "-m", "geovox.cli", *map(str, args)],
                          cwd=cwd, env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


def _tree(root):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


@pytest.fixture(scope="module")
def cli_inputs(tmp_path_factory):
    d = tmp_path_factory.mktemp("inputs")
    _cli(["synth", "bump-sphere", "--radius", 8, "--amp", 1, "--freq", 2, "-o", d / "bump.obj"], d, 1)
    seq = d / "seq"
    seq.mkdir()
    base = S.gen_ellipsoid(6, 6, 6, 12, 8)
    for t in range(3):
        S.write_obj(base.with_vertices(base.vertices * (1 + 0.05 * t)), seq / f"f{t}.obj")
    for t in range(3):
        vals = np.random.default_rng(t).normal(size=base.n_vertices)
        (d / f"v{t}.csv").write_text("vertex_index,value\n"
                                     + "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(vals)))
    S.write_obj(base, d / "ref.obj")
    return d


SUBCOMMANDS = {
    "synth": lambda d, o: ["synth", "torus", "--R", 10, "--r", 4, "-o", o / "t.obj"],
    "feature": lambda d, o: ["feature", d / "bump.obj", "-o", o, "--dump-intermediates"],
    "covfeat": lambda d, o: ["covfeat", d / "bump.xyz", "--k", 6, "-o", o / "f.csv"],
    "track": lambda d, o: ["track", d / "seq", "-o", o, "--max-iters", 20],
    "analyze": lambda d, o: ["analyze", "curve", d / "v0.csv", d / "v1.csv", d / "v2.csv",
                             "--mesh", d / "ref.obj", "--vertex", 20, "-o", o / "c.csv", "--svg", o / "c.svg"],
}


@crit(12, "determinism across runs and thread counts")
@pytest.mark.parametrize("name", list(SUBCOMMANDS))
def test_c12_cli_is_deterministic(name, cli_inputs, tmp_path):
    outs = []
    for i, threads in enumerate((1, 1, 4, 4)):
        o = tmp_path / f"run{i}"
        o.mkdir()
        _cli(SUBCOMMANDS[name](cli_inputs, o), tmp_path, threads)
        outs.append(o)
    files = _tree(outs[0])
    assert files
    for o in outs[1:]:
        assert _tree(o) == files
        _, mismatch, errors = filecmp.cmpfiles(outs[0], o, [str(f) for f in files], shallow=False)
        assert not mismatch and not errors, mismatch or errors
