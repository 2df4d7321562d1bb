"""Point sets, quad meshes, synthetic shape generators and mesh/point file I/O."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInput


@dataclass(frozen=True, eq=False)
class PointSet:
    points: np.ndarray
    attributes: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True).reshape(-1, 3)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        attrs = {}
        for name, vals in self.attributes.items():
            vals = np.array(vals, dtype=float, copy=True).reshape(-1)
            if len(vals) != len(pts):
                raise InvalidInput(f"attribute {name!r} has {len(vals)} entries for {len(pts)} points")
            vals.flags.writeable = False
            attrs[name] = vals
        object.__setattr__(self, "attributes", attrs)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class QuadMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float, copy=True).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64, copy=True).reshape(-1, 4)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise InvalidInput("face index out of range")
        if any(len(set(row)) != 4 for row in f.tolist()):
            raise InvalidInput("every quad needs 4 distinct vertex indices")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def with_vertices(self, vertices) -> "QuadMesh":
        """Same connectivity, new positions (the tracked-sequence contract)."""
        vertices = np.asarray(vertices, dtype=float)
        if vertices.shape != self.vertices.shape:
            raise InvalidInput("vertex array shape must not change")
        return QuadMesh(vertices, self.faces)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (E, 2) array with ``a < b``."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 3]], f[:, [3, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def edge_face_counts(self) -> dict:
        counts: dict = {}
        for quad in self.faces.tolist():
            for a, b in zip(quad, quad[1:] + quad[:1]):
                key = (a, b) if a < b else (b, a)
                counts[key] = counts.get(key, 0) + 1
        return counts

    def is_watertight(self) -> bool:
        return all(c == 2 for c in self.edge_face_counts().values())

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges()) + len(self.faces)

    def one_ring(self, vertex: int) -> list[int]:
        """Vertices sharing a face with ``vertex`` (sorted, excluding itself)."""
        rows = np.any(self.faces == vertex, axis=1)
        ring = set(self.faces[rows].ravel().tolist())
        ring.discard(vertex)
        return sorted(ring)

    def point_set(self) -> PointSet:
        return PointSet(self.vertices)


# ----------------------------------------------------------------- generators

def _check_resolution(n_u, n_v, even_u=False):
    if n_u < 8 or n_v < 8:
        raise InvalidInput("n_u and n_v must be at least 8")
    if even_u and n_u % 2:
        raise InvalidInput("n_u must be even so the pole caps split into quads")


def _latlong_angles(n_u, n_v):
    theta = (np.arange(n_v) + 0.5) * np.pi / n_v
    phi = np.arange(n_u) * 2.0 * np.pi / n_u
    # vertex index = j * n_u + i  (ring j, meridian i)
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    return th.ravel(), ph.ravel()


def _latlong_faces(n_u, n_v):
    faces = []
    for j in range(n_v - 1):
        for i in range(n_u):
            i1 = (i + 1) % n_u
            faces.append((j * n_u + i, (j + 1) * n_u + i, (j + 1) * n_u + i1, j * n_u + i1))
    # Poles are closed by a flat fan of quads over the first/last ring, so
    # every face keeps 4 distinct vertices and the surface stays watertight.
    last = (n_v - 1) * n_u
    for m in range(0, n_u - 2, 2):
        faces.append((0, m + 1, m + 2, m + 3))
        faces.append((last, last + m + 3, last + m + 2, last + m + 1))
    return np.array(faces, dtype=np.int64)


def _directions(theta, phi):
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=1)


def gen_torus(R_major: float, r_minor: float, n_u: int = 32, n_v: int = 16) -> QuadMesh:
    if not (R_major > r_minor > 0):
        raise InvalidInput("torus needs R_major > r_minor > 0")
    _check_resolution(n_u, n_v)
    u = np.arange(n_u) * 2.0 * np.pi / n_u
    v = np.arange(n_v) * 2.0 * np.pi / n_v
    uu, vv = np.meshgrid(u, v, indexing="ij")  # index = i * n_v + j
    ring = R_major + r_minor * np.cos(vv)
    verts = np.stack([ring * np.cos(uu), ring * np.sin(uu), r_minor * np.sin(vv)], axis=-1)
    faces = []
    for i in range(n_u):
        i1 = (i + 1) % n_u
        for j in range(n_v):
            j1 = (j + 1) % n_v
            faces.append((i * n_v + j, i1 * n_v + j, i1 * n_v + j1, i * n_v + j1))
    return QuadMesh(verts.reshape(-1, 3), faces)


def gen_ellipsoid(a: float, b: float, c: float, n_u: int = 32, n_v: int = 16) -> QuadMesh:
    if min(a, b, c) <= 0:
        raise InvalidInput("semi-axes must be positive")
    _check_resolution(n_u, n_v, even_u=True)
    th, ph = _latlong_angles(n_u, n_v)
    verts = _directions(th, ph) * np.array([a, b, c])
    return QuadMesh(verts, _latlong_faces(n_u, n_v))


def gap_profile(radius: float, gap_angle_deg: float, depth: float, directions) -> np.ndarray:
    """Radial distance of the gap sphere along unit ``directions``.

    The indentation is centred on +x with a raised-cosine profile that is
    ``depth`` deep at the centre and vanishes at half the angular extent.
    """
    half = np.deg2rad(gap_angle_deg) / 2.0
    alpha = np.arccos(np.clip(np.asarray(directions)[:, 0], -1.0, 1.0))
    w = np.where(alpha < half, 0.5 * (1.0 + np.cos(np.pi * alpha / half)), 0.0)
    return radius - depth * w


def gen_sphere_gap(radius: float, gap_angle_deg: float, depth: float,
                   n_u: int = 32, n_v: int = 17) -> QuadMesh:
    if radius <= 0 or depth < 0 or not (0 < gap_angle_deg < 360):
        raise InvalidInput("need radius > 0, depth >= 0 and 0 < gap angle < 360")
    if depth >= radius:
        raise InvalidInput("gap depth must be smaller than the radius")
    _check_resolution(n_u, n_v, even_u=True)
    th, ph = _latlong_angles(n_u, n_v)
    d = _directions(th, ph)
    return QuadMesh(d * gap_profile(radius, gap_angle_deg, depth, d)[:, None],
                    _latlong_faces(n_u, n_v))


def bump_radius(radius, bump_amp, bump_freq, theta, phi):
    return radius + bump_amp * np.sin(bump_freq * theta) * np.sin(bump_freq * phi)


def gen_bump_sphere(radius: float, bump_amp: float, bump_freq: int,
                    n_u: int = 32, n_v: int = 16) -> QuadMesh:
    if radius <= 0 or abs(bump_amp) >= radius:
        raise InvalidInput("need radius > 0 and |bump_amp| < radius")
    if int(bump_freq) != bump_freq or bump_freq < 0:
        raise InvalidInput("bump_freq must be a non-negative integer (periodic in phi)")
    _check_resolution(n_u, n_v, even_u=True)
    th, ph = _latlong_angles(n_u, n_v)
    r = bump_radius(radius, bump_amp, bump_freq, th, ph)
    return QuadMesh(_directions(th, ph) * r[:, None], _latlong_faces(n_u, n_v))


def bump_sequence(radius, amplitudes, bump_freq, n_u=32, n_v=16) -> list[QuadMesh]:
    """Frames of a bump sphere whose amplitude follows ``amplitudes``."""
    return [gen_bump_sphere(radius, a, bump_freq, n_u, n_v) for a in amplitudes]


def sample_surface(mesh: QuadMesh, step: float) -> PointSet:
    """Dense points on every quad (bilinear patches) at roughly ``step`` spacing.

    Mesh vertices come first, in order, followed by the interior samples.
    """
    if step <= 0:
        raise InvalidInput("step must be positive")
    v = mesh.vertices
    out = [v]
    for quad in mesh.faces:
        p0, p1, p2, p3 = v[quad]
        longest = max(np.linalg.norm(p1 - p0), np.linalg.norm(p2 - p1),
                      np.linalg.norm(p3 - p2), np.linalg.norm(p0 - p3))
        n = max(1, int(np.ceil(longest / step)))
        s = np.linspace(0.0, 1.0, n + 1)
        a, b = np.meshgrid(s, s, indexing="ij")
        a = a.ravel()[:, None]
        b = b.ravel()[:, None]
        pts = ((1 - a) * (1 - b) * p0 + a * (1 - b) * p1 + a * b * p2 + (1 - a) * b * p3)
        out.append(pts)
    return PointSet(np.concatenate(out))


def subsample_by_voxel(points: PointSet, cell: float) -> PointSet:
    """Keep one point per occupied cell of a lattice of pitch ``cell``.

    The survivor is the point nearest the cell's geometric centre (lowest
    index on ties). Output is ordered by cell key (x, then y, then z).
    """
    if cell <= 0:
        raise InvalidInput("cell must be positive")
    pts = points.points
    if len(pts) == 0:
        return points
    keys = np.floor(pts / cell).astype(np.int64)
    centre = (keys + 0.5) * cell
    dist = np.linalg.norm(pts - centre, axis=1)
    order = np.lexsort((np.arange(len(pts)), dist, keys[:, 2], keys[:, 1], keys[:, 0]))
    sk = keys[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = np.any(sk[1:] != sk[:-1], axis=1)
    keep = order[first]
    attrs = {k: v[keep] for k, v in points.attributes.items()}
    return PointSet(pts[keep], attrs)


# ----------------------------------------------------------------------- I/O

def _fmt(x: float) -> str:
    return repr(float(x))


def write_obj(mesh: QuadMesh, path) -> None:
    lines = [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in mesh.vertices]
    lines += ["f " + " ".join(str(i + 1) for i in quad) for quad in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _pair_triangles(tris):
    """Merge consecutive triangles sharing an edge into quads."""
    quads = []
    k = 0
    while k < len(tris):
        if k + 1 >= len(tris):
            raise FormatError("unpaired triangle left over in lenient mode")
        t1, t2 = tris[k], tris[k + 1]
        shared = set(t1) & set(t2)
        if len(shared) != 2:
            raise FormatError(f"triangles {t1} and {t2} do not share an edge")
        a = next(x for x in t1 if x not in shared)
        b = next(x for x in t2 if x not in shared)
        # walk t1 starting at its unique vertex, insert b between the shared pair
        i = t1.index(a)
        quads.append((a, t1[(i + 1) % 3], b, t1[(i + 2) % 3]))
        k += 2
    return quads


def read_obj(path, strict: bool = True) -> QuadMesh:
    """Read an OBJ file with quad faces.

    In lenient mode consecutive triangle pairs sharing an edge are merged
    into quads and even n-gons are fanned into quads; anything else raises.
    """
    verts = []
    quads = []
    tris = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "v":
            try:
                verts.append([float(x) for x in parts[1:4]])
            except ValueError as exc:
                raise FormatError(f"line {lineno}: bad vertex") from exc
            if len(parts) < 4:
                raise FormatError(f"line {lineno}: vertex needs 3 coordinates")
        elif parts[0] == "f":
            try:
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
            except ValueError as exc:
                raise FormatError(f"line {lineno}: bad face") from exc
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            if len(idx) == 4:
                quads.append(tuple(idx))
            elif strict:
                raise FormatError(f"line {lineno}: face with {len(idx)} vertices (strict mode)")
            elif len(idx) == 3:
                tris.append(tuple(idx))
            elif len(idx) % 2 == 0 and len(idx) > 4:
                quads += [(idx[0], idx[m + 1], idx[m + 2], idx[m + 3])
                          for m in range(0, len(idx) - 2, 2)]
            else:
                raise FormatError(f"line {lineno}: cannot convert a {len(idx)}-gon to quads")
    if tris:
        quads += _pair_triangles(tris)
    try:
        return QuadMesh(np.array(verts, dtype=float).reshape(-1, 3),
                        np.array(quads, dtype=np.int64).reshape(-1, 4))
    except InvalidInput as exc:
        raise FormatError(str(exc)) from exc


def write_mesh_with_scalar(mesh: QuadMesh, channel, path) -> Path:
    """Write ``path`` as OBJ plus a sidecar ``<stem>.csv`` of per-vertex values."""
    channel = np.asarray(channel, dtype=float).reshape(-1)
    if len(channel) != mesh.n_vertices:
        raise InvalidInput(f"scalar channel has {len(channel)} values for {mesh.n_vertices} vertices")
    path = Path(path)
    write_obj(mesh, path)
    sidecar = path.with_suffix(".csv")
    with sidecar.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vertex_index", "value"])
        for i, val in enumerate(channel):
            w.writerow([i, _fmt(val)])
    return sidecar


def read_xyz(path) -> PointSet:
    pts = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 3:
            raise FormatError(f"line {lineno}: expected 'x y z'")
        try:
            pts.append([float(x) for x in parts[:3]])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: non-numeric coordinate") from exc
    return PointSet(np.array(pts, dtype=float).reshape(-1, 3))


def write_xyz(points, path) -> None:
    pts = getattr(points, "points", points)
    lines = [f"{_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in np.asarray(pts, dtype=float)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
