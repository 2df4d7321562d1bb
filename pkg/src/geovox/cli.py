"""Command-line front end.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
Settings resolve as command-line flag, then TOML config, then default.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .errors import GeovoxError, NonPositiveG, NotConverged, NumericalBlowup

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

log = logging.getLogger("geovox")

# (name, type, default) per subcommand; these are the keys accepted in TOML
FEATURE_PARAMS = [
    ("spacing", float, 1.0), ("closing", int, 2), ("erosion_iters", int, 1),
    ("radius_scale", float, 0.8), ("axis_length", str, "extent"), ("tol", float, 0.5),
    ("max_iters", int, 5000), ("length_tol", float, 1e-6), ("max_sweeps", int, 400),
    ("surface_step", float, 0.5),
]
COVFEAT_PARAMS = [("k", int, 4)]
TRACK_PARAMS = [
    ("sigma_v", float, 8.0), ("sigma_w", float, None), ("gamma", float, None),
    ("steps", int, 15), ("max_iters", int, 200), ("step_size", float, None),
]
POSITIVE = {"spacing", "radius_scale", "tol", "max_iters", "length_tol", "max_sweeps",
            "surface_step", "k", "sigma_v", "sigma_w", "steps", "step_size"}
NON_NEGATIVE = {"closing", "erosion_iters", "gamma"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _configure_threads() -> None:
    # must run before numba is imported; NUMBA_NUM_THREADS fixes the pool size
    raw = os.environ.get("GEOVOX_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"GEOVOX_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("GEOVOX_THREADS must be >= 0")
    if n > 0:
        if "numba" in sys.modules:
            import numba
            numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
        else:
            os.environ["NUMBA_NUM_THREADS"] = str(n)


def _add_params(p, params):
    for name, typ, _ in params:
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="geovox", description="Geodesic-length shape features and surface tracking.")
    ap.add_argument("--config", type=Path, help="TOML file with per-subcommand tables")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic quad mesh (OBJ + XYZ)")
    p.add_argument("shape", help="torus | ellipsoid | sphere | sphere-gap | bump-sphere | bump-sequence")
    p.add_argument("-o", "--output", type=Path, required=True)
    for flag, typ in [("--R", float), ("--r", float), ("--a", float), ("--b", float), ("--c", float),
                      ("--radius", float), ("--gap", float), ("--depth", float), ("--amp", float),
                      ("--freq", int), ("--frames", int), ("--n-u", int), ("--n-v", int)]:
        p.add_argument(flag, type=typ, default=None)

    p = sub.add_parser("feature", help="geodesic feature of a mesh, point cloud or mask")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True, help="output directory")
    p.add_argument("--dump-intermediates", action="store_true")
    p.add_argument("--lenient", action="store_true", help="accept triangles / n-gons in OBJ input")
    _add_params(p, FEATURE_PARAMS)

    p = sub.add_parser("covfeat", help="covariance eigenfeatures per point")
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True, help="output CSV")
    p.add_argument("--lenient", action="store_true")
    _add_params(p, COVFEAT_PARAMS)

    p = sub.add_parser("track", help="propagate a mesh through a contour sequence")
    p.add_argument("frames_dir", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True, help="output directory")
    p.add_argument("--mesh", type=Path, help="initial quad mesh (default: first frame if OBJ)")
    p.add_argument("--lenient", action="store_true")
    _add_params(p, TRACK_PARAMS)

    p = sub.add_parser("analyze", help="sequence analyses of feature maps and meshes")
    p.add_argument("mode", choices=["correlate", "elongation", "difference", "curve"])
    p.add_argument("inputs", type=Path, nargs="+",
                   help="feature CSVs (frame order) or, for elongation, REF.obj DEFORMED.obj")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--frame", type=int, default=None, help="frame index for 'difference'")
    p.add_argument("--mesh", type=Path, help="mesh for 'curve'")
    p.add_argument("--vertex", type=int, default=None, help="vertex for 'curve'")
    p.add_argument("--svg", type=Path, help="also draw the series as an SVG polyline")
    return ap


# ------------------------------------------------------------- helpers


def _load_toml(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"invalid TOML in {path}: {exc}") from None


def _resolve(args, config: dict, section: str, params) -> tuple[dict, dict]:
    """Merge flag > TOML > default; returns values and their provenance."""
    table = config.get(section, {})
    if not isinstance(table, dict):
        raise UsageError(f"config section [{section}] must be a table")
    known = {name for name, _, _ in params}
    unknown = set(table) - known
    if unknown:
        raise UsageError(f"unknown keys in [{section}]: {', '.join(sorted(unknown))}")
    values, source = {}, {}
    for name, typ, default in params:
        flag = getattr(args, name)
        if flag is not None:
            values[name], source[name] = flag, "flag"
        elif name in table:
            try:
                values[name] = typ(table[name])
            except (TypeError, ValueError):
                raise UsageError(f"config key {section}.{name} has the wrong type") from None
            source[name] = "config"
        else:
            values[name], source[name] = default, "default"
        val = values[name]
        if val is None or typ is str:
            continue
        if name in POSITIVE and not val > 0:
            raise UsageError(f"{name} must be positive")
        if name in NON_NEGATIVE and val < 0:
            raise UsageError(f"{name} must be non-negative")
    return values, source


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n",
                    encoding="utf-8")


def _require_file(path: Path) -> None:
    if not path.is_file():
        raise UsageError(f"input file not found: {path}")


def _load_shape(path: Path, lenient: bool):
    from .grids import read_grid
    from .shapes import read_obj, read_xyz
    _require_file(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return read_obj(path, strict=not lenient)
    if suffix == ".xyz":
        return read_xyz(path)
    if suffix == ".vgf":
        return read_grid(path)
    raise UsageError(f"unsupported input format {suffix!r} (expected .obj, .xyz or .vgf)")


def _frame_values(path: Path):
    """Per-vertex values from a CSV with a ``value`` column (or its last column)."""
    import numpy as np
    _require_file(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise UsageError(f"{path} holds no data rows")
    header = rows[0]
    col = header.index("value") if "value" in header else len(header) - 1
    try:
        return np.array([float(r[col]) for r in rows[1:]])
    except (ValueError, IndexError):
        raise UsageError(f"{path}: non-numeric value column") from None


# ---------------------------------------------------------- subcommands


def cmd_synth(args, config) -> int:
    from . import shapes
    table = config.get("synth", {})

    def get(name, default):
        val = getattr(args, name)
        if val is None:
            val = table.get(name, default)
        return val

    n_u, n_v = get("n_u", 32), get("n_v", 16)
    kind = args.shape
    if kind == "torus":
        mesh = shapes.gen_torus(get("R", 10.0), get("r", 4.0), n_u, n_v)
    elif kind == "ellipsoid":
        mesh = shapes.gen_ellipsoid(get("a", 12.0), get("b", 9.0), get("c", 7.0), n_u, n_v)
    elif kind == "sphere":
        rad = get("radius", 10.0)
        mesh = shapes.gen_ellipsoid(rad, rad, rad, n_u, n_v)
    elif kind == "sphere-gap":
        mesh = shapes.gen_sphere_gap(get("radius", 10.0), get("gap", 60.0), get("depth", 3.0),
                                     n_u, get("n_v", 17))
    elif kind == "bump-sphere":
        mesh = shapes.gen_bump_sphere(get("radius", 10.0), get("amp", 1.5), get("freq", 3), n_u, n_v)
    elif kind == "bump-sequence":
        import numpy as np
        frames = get("frames", 10)
        if frames < 2:
            raise UsageError("bump-sequence needs at least 2 frames")
        amps = np.linspace(0.0, get("amp", 1.5), frames)
        meshes = shapes.bump_sequence(get("radius", 10.0), amps, get("freq", 3), n_u, n_v)
        out = args.output
        out.mkdir(parents=True, exist_ok=True)
        for t, mesh in enumerate(meshes):
            shapes.write_obj(mesh, out / f"frame_{t:03d}.obj")
        log.info("wrote %d frames to %s", frames, out)
        return EXIT_OK
    else:
        raise UsageError(f"unknown shape {kind!r}")
    out = args.output
    out.parent.mkdir(parents=True, exist_ok=True)
    shapes.write_obj(mesh, out)
    shapes.write_xyz(mesh.point_set(), out.with_suffix(".xyz"))
    return EXIT_OK


def cmd_feature(args, config) -> int:
    import numpy as np

    from . import eulerian
    from .grids import BinaryMask, write_grid
    from .pipeline import FeatureConfig, shape_mask
    from .shapes import PointSet, QuadMesh, write_mesh_with_scalar

    params, source = _resolve(args, config, "feature", FEATURE_PARAMS)
    if params["axis_length"] not in eulerian.AXIS_LENGTH_MODES:
        raise UsageError(f"axis_length must be one of {eulerian.AXIS_LENGTH_MODES}")
    shape = _load_shape(args.input, args.lenient)
    if not isinstance(shape, (BinaryMask, QuadMesh, PointSet)):
        raise UsageError("grid input must be a binary mask (dtype tag 1)")
    out = args.output
    out.mkdir(parents=True, exist_ok=True)
    fc = FeatureConfig(spacing=params["spacing"], closing=params["closing"],
                       erosion_iters=params["erosion_iters"], radius_scale=params["radius_scale"],
                       axis_length=params["axis_length"], laplace_tol=params["tol"],
                       max_iters=params["max_iters"], length_tol=params["length_tol"],
                       max_sweeps=params["max_sweeps"], surface_step=params["surface_step"])
    dump = args.dump_intermediates
    report = {"input": args.input.name, "config": params, "config_source": source}

    mask = shape_mask(shape, fc)
    cfg = eulerian.setup_boundaries(mask, fc.erosion_iters, fc.radius_scale, fc.axis_length,
                                    fc.subvoxel)
    if dump:
        write_grid(mask, out / "mask.vgf")
        write_grid(cfg.inner, out / "inner.vgf")
    h, lap = eulerian.solve_laplace(cfg, fc.laplace_tol, fc.max_iters, raise_on_fail=False)
    report.update(iterations=lap.iterations, residual=lap.residual, R=cfg.radius,
                  center=list(cfg.center), radius_grown=cfg.grown)
    if dump:
        write_grid(h, out / "h.vgf")
    if not lap.converged:
        report["status"] = "laplace_not_converged"
        _write_json(out / "report.json", report)
        log.error("Laplace relaxation did not converge (residual %.3g)", lap.residual)
        return EXIT_NUMERIC
    T, stagnant = eulerian.tangent_field(h, cfg.region)
    L0, L1, lrep = eulerian.solve_lengths(T, cfg, h, fc.length_tol, fc.max_sweeps, stagnant,
                                          raise_on_fail=False)
    report.update(length_sweeps=lrep.iterations, length_residual=lrep.residual,
                  stagnant_count=int(stagnant.sum()))
    G = eulerian.grid_like(L0, L0.values + L1.values)
    if dump:
        write_grid(L0, out / "L0.vgf")
        write_grid(L1, out / "L1.vgf")
        write_grid(G, out / "G.vgf")
    if not lrep.converged:
        report["status"] = "lengths_not_converged"
        _write_json(out / "report.json", report)
        log.error("length sweeps did not converge (change %.3g)", lrep.residual)
        return EXIT_NUMERIC
    feat = eulerian.feature_field(cfg, G)
    write_grid(feat, out / "feat.vgf")
    fields = eulerian.GeodesicFields(h, T, L0, L1, G, feat, stagnant, lap, lrep)

    where = None
    if isinstance(shape, QuadMesh):
        where = shape.vertices
    elif isinstance(shape, PointSet):
        where = shape.points
    if where is not None:
        sample = eulerian.surface_feature(where, fields, cfg)
        with (out / "features.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["vertex_index", "x", "y", "z", "value"])
            for i, (p, v) in enumerate(zip(where, sample.values)):
                w.writerow([i, *(repr(float(c)) for c in p), repr(float(v))])
        if isinstance(shape, QuadMesh):
            write_mesh_with_scalar(shape, sample.values, out / "feature_mesh.obj")
        finite = sample.values[np.isfinite(sample.values)]
        report.update(projected_vertices=len(sample.projected),
                      out_of_domain=list(sample.out_of_domain),
                      surface_mean=float(finite.mean()) if finite.size else None,
                      surface_std=float(finite.std()) if finite.size else None)
    report["status"] = "ok"
    _write_json(out / "report.json", report)
    return EXIT_OK


def cmd_covfeat(args, config) -> int:
    from . import covariance
    params, _ = _resolve(args, config, "covfeat", COVFEAT_PARAMS)
    shape = _load_shape(args.input, args.lenient)
    pts = getattr(shape, "points", getattr(shape, "vertices", None))
    if pts is None:
        raise UsageError("covfeat needs a point cloud or a mesh")
    feats = covariance.pointwise_features(pts, params["k"])
    args.output.parent.mkdir(parents=True, exist_ok=True)
    covariance.write_features_csv(pts, feats, args.output)
    return EXIT_OK


def _frame_files(frames_dir: Path) -> list[Path]:
    if not frames_dir.is_dir():
        raise UsageError(f"frames directory not found: {frames_dir}")
    files = sorted(p for p in frames_dir.iterdir() if p.suffix.lower() in (".obj", ".xyz"))
    if len(files) < 2:
        raise UsageError("tracking needs at least two frame files (.obj or .xyz)")
    return files


def cmd_track(args, config) -> int:
    from . import lddmm
    from .shapes import QuadMesh, write_obj

    params, source = _resolve(args, config, "track", TRACK_PARAMS)
    files = _frame_files(args.frames_dir)
    contours = [_load_shape(f, args.lenient) for f in files]
    if args.mesh is not None:
        mesh0 = _load_shape(args.mesh, args.lenient)
    else:
        mesh0 = contours[0]
    if not isinstance(mesh0, QuadMesh):
        raise UsageError("the initial mesh must be a quad OBJ (use --mesh)")
    settings = lddmm.RegistrationSettings(
        sigma_v=params["sigma_v"], sigma_w=params["sigma_w"], gamma=params["gamma"],
        n_steps=params["steps"], max_iters=params["max_iters"], step_size=params["step_size"])
    out = args.output
    out.mkdir(parents=True, exist_ok=True)
    write_obj(mesh0, out / "frame_000.obj")

    def save(t, traj):
        write_obj(traj.mesh(t), out / f"frame_{t:03d}.obj")
        _write_json(out / "diagnostics.json", _track_report(traj, files, params, source))

    try:
        traj = lddmm.track_sequence(mesh0, contours, settings, on_frame=save)
    except lddmm.TrackingFailed as exc:
        _write_json(out / "diagnostics.json",
                    {**_track_report(exc.result, files, params, source), "status": str(exc)})
        log.error("%s", exc)
        return EXIT_NUMERIC
    report = _track_report(traj, files, params, source)
    report["final_error"] = lddmm.tracking_error(traj.frames[-1], contours[-1])
    report["status"] = "ok"
    _write_json(out / "diagnostics.json", report)
    return EXIT_OK


def _track_report(traj, files, params, source) -> dict:
    return {"frames": [f.name for f in files], "config": params, "config_source": source,
            "per_frame": traj.diagnostics}


def cmd_analyze(args, config) -> int:
    import numpy as np

    from . import temporal
    from .shapes import read_obj

    out = args.output
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.mode == "elongation":
        if len(args.inputs) != 2:
            raise UsageError("elongation takes REF.obj DEFORMED.obj")
        for p in args.inputs:
            _require_file(p)
        ref, deformed = (read_obj(p) for p in args.inputs)
        values = temporal.elongation(ref, deformed)
        temporal.write_columns(out, ["vertex", "elongation"], range(len(values)), values)
        series_for_svg = values
    else:
        series = temporal.FeatureSeries([_frame_values(p) for p in args.inputs])
        if args.mode == "correlate":
            values = temporal.pearson_series(series)
            temporal.write_columns(out, ["frame", "r_t"], range(len(values)), values)
        elif args.mode == "difference":
            if args.frame is None:
                raise UsageError("difference needs --frame")
            values = temporal.feature_difference(series, args.frame)
            temporal.write_columns(out, ["vertex", "difference"], range(len(values)), values)
        else:
            if args.mesh is None or args.vertex is None:
                raise UsageError("curve needs --mesh and --vertex")
            _require_file(args.mesh)
            curve = temporal.point_neighborhood_curve(series, read_obj(args.mesh), args.vertex)
            values = curve.normalized
            temporal.write_columns(out, ["frame", "curve_value"], range(len(values)), values)
            _write_json(out.with_suffix(".json"),
                        {"vertex": args.vertex, "ring": curve.ring, "raw": curve.raw.tolist(),
                         "normalization": curve.normalization})
        series_for_svg = values
    if args.svg is not None:
        temporal.svg_polyline(np.asarray(series_for_svg), args.svg, title=args.mode)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "feature": cmd_feature, "covfeat": cmd_covfeat,
            "track": cmd_track, "analyze": cmd_analyze}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _configure_threads()
        config = _load_toml(args.config)
        return COMMANDS[args.command](args, config)
    except UsageError as exc:
        print(f"geovox: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (NotConverged, NumericalBlowup, NonPositiveG) as exc:
        print(f"geovox: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GeovoxError, OSError) as exc:
        print(f"geovox: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
