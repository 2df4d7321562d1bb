"""Geodesic-length feature between a shape and its surrounding sphere.

Pipeline: Dirichlet boundaries (eroded shape inside, sphere complement
outside) -> Laplace by Jacobi relaxation -> unit tangent field of the
harmonic interpolant -> upwind Gauss-Seidel integration of the two path
lengths -> feature R / (L0 + L1).
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import DegenerateShape, GridTooSmall, InvalidInput, NonPositiveG, NotConverged, OutOfDomain
from .grids import BinaryMask, ScalarGrid, erode_cross, gradient, pad, trilinear_weights

log = logging.getLogger(__name__)

INNER_VALUE = 0.0
OUTER_VALUE = 1.0e4
SWEEP_ORDERS = tuple(itertools.product((1, -1), repeat=3))


@dataclass(frozen=True, eq=False)
class BoundaryConfig:
    inner: BinaryMask
    outer: BinaryMask
    region: BinaryMask
    center: tuple
    radius: float
    shape: BinaryMask | None = None
    inner_value: float = INNER_VALUE
    outer_value: float = OUTER_VALUE
    grown: bool = False
    # Optional signed distances (>0 on the region side) locating a boundary
    # surface between voxel centres; None means the surface sits on the
    # boundary voxel centres.
    inner_sdf: np.ndarray | None = None
    outer_sdf: np.ndarray | None = None

    def labels(self) -> np.ndarray:
        lab = np.full(self.region.dims, _kernels.REGION, dtype=np.int8)
        lab[self.inner.occupancy] = _kernels.INNER
        lab[self.outer.occupancy] = _kernels.OUTER
        return lab


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    history: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class GeodesicFields:
    h: ScalarGrid
    T: tuple
    L0: ScalarGrid
    L1: ScalarGrid
    G: ScalarGrid
    feat: ScalarGrid
    stagnant: np.ndarray
    laplace: SolveReport
    lengths: SolveReport

    @property
    def stagnant_count(self) -> int:
        return int(self.stagnant.sum())


# ------------------------------------------------------------- boundaries

AXIS_LENGTH_MODES = ("extent", "inertia")


def principal_extent(shape: BinaryMask, mode: str = "extent"):
    """Centroid, dominant inertia axis and its length for the occupied voxels.

    ``mode="extent"``: max minus min of the voxel projections on the axis.
    ``mode="inertia"``: ``2 * sqrt(5 * lambda_max)``, the axis length of the
    solid ellipsoid with the same second moments (equals the diameter of a
    ball); insensitive to which extremal voxel the axis happens to hit.
    """
    if mode not in AXIS_LENGTH_MODES:
        raise InvalidInput(f"unknown axis length mode {mode!r}")
    pts = shape.voxel_centers(shape.occupancy)
    if len(pts) == 0:
        raise DegenerateShape("empty shape mask")
    center = pts.mean(axis=0)
    d = pts - center
    cov = d.T @ d / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    top = int(np.argmax(evals))
    axis = evecs[:, top]
    if mode == "inertia":
        return center, axis, float(2.0 * np.sqrt(5.0 * max(evals[top], 0.0)))
    proj = d @ axis
    return center, axis, float(proj.max() - proj.min())


def fit_sphere(shape: BinaryMask, radius_scale: float = 0.8, axis_length: str = "extent"):
    """Centre and radius of the surrounding sphere (grown 5% at a time until
    every shape voxel centre is strictly inside)."""
    if radius_scale <= 0:
        raise InvalidInput("radius_scale must be positive")
    center, _, extent = principal_extent(shape, axis_length)
    radius = radius_scale * extent
    if radius <= 0:
        radius = min(shape.spacing)
    pts = shape.voxel_centers(shape.occupancy)
    far = float(np.sqrt(((pts - center) ** 2).sum(axis=1).max()))
    grown = False
    while far >= radius:
        radius *= 1.05
        grown = True
    if grown:
        log.warning("sphere radius grown to %.4g to contain the shape", radius)
    return center, radius, grown


def pad_for_sphere(shape: BinaryMask, radius_scale: float = 0.8, margin: int = 2,
                   axis_length: str = "extent") -> BinaryMask:
    """Pad ``shape`` so the surrounding sphere fits with ``margin`` voxels to spare."""
    center, radius, _ = fit_sphere(shape, radius_scale, axis_length)
    c = shape.world_to_index(center)
    r = radius / np.asarray(shape.spacing)
    dims = np.asarray(shape.dims)
    need = max(np.max(margin - (c - r)), np.max((c + r) - (dims - 1 - margin)), 0.0)
    n = int(np.ceil(need))
    return pad(shape, n) if n else shape


def mask_sdf(mask: BinaryMask) -> np.ndarray:
    """Signed distance to the mask's half-voxel surface (negative inside).

    Voxels are treated as cells, so the surface passes half a voxel
    beyond the outermost occupied centres.
    """
    occ = mask.occupancy
    half = 0.5 * min(mask.spacing)
    din = ndimage.distance_transform_edt(occ, sampling=mask.spacing)
    dout = ndimage.distance_transform_edt(~occ, sampling=mask.spacing)
    return np.where(occ, half - din, dout - half)


def setup_boundaries(shape: BinaryMask, erosion_iters: int = 1,
                     radius_scale: float = 0.8, axis_length: str = "extent",
                     subvoxel: bool = True) -> BoundaryConfig:
    """Inner boundary = eroded shape, outer = complement of the fitted sphere.

    With ``subvoxel`` the inner surface sits on the eroded mask's cell
    faces rather than on its voxel centres, which removes a half-voxel
    thickness bias that does not shrink with the shape size.
    """
    if not shape.occupancy.any():
        raise DegenerateShape("empty shape mask")
    inner = erode_cross(shape, erosion_iters)
    center, radius, grown = fit_sphere(shape, radius_scale, axis_length)
    idx = np.indices(shape.dims, dtype=float)
    dist2 = sum(((shape.origin[a] + idx[a] * shape.spacing[a]) - center[a]) ** 2 for a in range(3))
    in_sphere = dist2 <= radius * radius
    border = np.zeros(shape.dims, dtype=bool)
    border[[0, -1], :, :] = True
    border[:, [0, -1], :] = True
    border[:, :, [0, -1]] = True
    if np.any(in_sphere & border):
        raise GridTooSmall(
            f"sphere of radius {radius:.4g} does not fit inside the grid; pad the mask")
    outer = ~in_sphere
    region = ~(inner.occupancy | outer)
    return BoundaryConfig(
        inner=inner,
        outer=shape.with_occupancy(outer),
        region=shape.with_occupancy(region),
        center=tuple(float(x) for x in center),
        radius=float(radius),
        shape=shape,
        grown=grown,
        inner_sdf=mask_sdf(inner) if subvoxel else None,
        outer_sdf=radius - np.sqrt(dist2),
    )


# ------------------------------------------------------------------ Laplace

MIN_FRACTION = 1e-3


def jacobi_weights(spacing) -> np.ndarray:
    """Neighbour weights of the anisotropic 7-point Jacobi update.

    An axis-a neighbour is weighted by the product of the squared spacings
    of the other two axes; the six weights sum to 1.
    """
    d2 = np.asarray(spacing, dtype=float) ** 2
    w = np.array([d2[1] * d2[2], d2[0] * d2[2], d2[0] * d2[1]])
    return w / (2.0 * w.sum())


def laplace_stencil(cfg: BoundaryConfig):
    """Per-voxel Jacobi coefficients for the region.

    Away from the boundaries this is the plain weighted 6-neighbour average.
    When a neighbour belongs to a boundary whose signed distance is known,
    the Dirichlet value is imposed where the surface actually crosses the
    grid line (Shortley-Weller), instead of at the boundary voxel centre.
    Returns ``(idx, nbr, coef, const)`` for :func:`_kernels.jacobi_step`.
    """
    region = cfg.region.occupancy
    shape = region.shape
    if (region[[0, -1], :, :].any() or region[:, [0, -1], :].any()
            or region[:, :, [0, -1]].any()):
        raise GridTooSmall("region voxels touch the grid border; pad the grid")
    labels = cfg.labels()
    pos = np.argwhere(region)
    idx = np.ravel_multi_index(pos.T, shape).astype(np.int64)
    n = len(pos)
    d2 = np.asarray(cfg.region.spacing, dtype=float) ** 2
    sdf = {_kernels.INNER: cfg.inner_sdf, _kernels.OUTER: cfg.outer_sdf}
    value = {_kernels.INNER: cfg.inner_value, _kernels.OUTER: cfg.outer_value}

    theta = np.ones((n, 6))
    nbr = np.empty((n, 6), dtype=np.int64)
    bval = np.zeros((n, 6))
    for a in range(3):
        for side, s in enumerate((-1, 1)):
            q = 2 * a + side
            npos = pos.copy()
            npos[:, a] += s
            lab = labels[tuple(npos.T)]
            nbr[:, q] = np.ravel_multi_index(npos.T, shape)
            for tag in (_kernels.INNER, _kernels.OUTER):
                hit = lab == tag
                if not hit.any():
                    continue
                nbr[hit, q] = -1
                bval[hit, q] = value[tag]
                phi = sdf[tag]
                if phi is None:
                    continue
                p0 = phi[tuple(pos[hit].T)]
                p1 = phi[tuple(npos[hit].T)]
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = np.where(p0 - p1 > 0, p0 / (p0 - p1), 1.0)
                theta[hit, q] = np.clip(t, MIN_FRACTION, 1.0)
    coef = np.empty((n, 6))
    for a in range(3):
        tm, tp = theta[:, 2 * a], theta[:, 2 * a + 1]
        coef[:, 2 * a] = 2.0 / (tm * (tm + tp) * d2[a])
        coef[:, 2 * a + 1] = 2.0 / (tp * (tm + tp) * d2[a])
    coef /= coef.sum(axis=1, keepdims=True)
    const = (coef * bval * (nbr < 0)).sum(axis=1)
    coef[nbr < 0] = 0.0
    return idx, nbr, coef, const


def solve_laplace(cfg: BoundaryConfig, tol: float = 0.5, max_iters: int = 5000,
                  raise_on_fail: bool = True):
    """Harmonic interpolant between the two boundaries by Jacobi relaxation.

    Boundary voxels are held at their Dirichlet values, region voxels start
    at the midpoint value. Stops when the max per-voxel change of a sweep
    drops below ``tol``. Returns ``(h, report)``; ``report.history`` holds
    the change of every sweep.
    """
    if tol <= 0 or max_iters < 1:
        raise InvalidInput("tol must be positive and max_iters >= 1")
    h = np.full(cfg.region.dims, 0.5 * (cfg.inner_value + cfg.outer_value))
    h[cfg.inner.occupancy] = cfg.inner_value
    h[cfg.outer.occupancy] = cfg.outer_value
    grid = cfg.region
    if not grid.occupancy.any():
        return grid_like(grid, h), SolveReport(0, 0.0, True)
    idx, nbr, coef, const = laplace_stencil(cfg)
    buf = h.copy()
    history = []
    residual = np.inf
    it = 0
    while it < max_iters:
        residual = _kernels.jacobi_step(h, buf, idx, nbr, coef, const)
        h, buf = buf, h
        it += 1
        history.append(float(residual))
        if residual < tol:
            break
    report = SolveReport(it, float(residual), residual < tol, history)
    out = grid_like(grid, h)
    if not report.converged and raise_on_fail:
        raise NotConverged(f"Jacobi residual {residual:.3g} after {it} sweeps", out, report)
    return out, report


def grid_like(ref, values) -> ScalarGrid:
    return ScalarGrid(ref.spacing, ref.origin, values=values)


# ------------------------------------------------------------ tangent field

def tangent_field(h: ScalarGrid, region: BinaryMask, eps: float = 1e-9):
    """Unit gradient of ``h`` inside ``region``.

    The gradient uses every voxel (boundary values are known), so central
    differences straddle the Dirichlet layers. Returns ``(T, stagnant)``
    where ``stagnant`` flags region voxels with ``|grad h| <= eps``.
    """
    g = np.stack([c.values for c in gradient(h)])
    norm = np.sqrt((g ** 2).sum(axis=0))
    inside = region.occupancy
    ok = inside & (norm > eps)
    T = np.zeros_like(g)
    T[:, ok] = g[:, ok] / norm[ok]
    stagnant = inside & ~ok
    return tuple(grid_like(h, T[a]) for a in range(3)), stagnant


# ------------------------------------------------------------------ lengths

def _bbox(mask):
    nz = np.argwhere(mask)
    if len(nz) == 0:
        return np.zeros(3, np.int64), np.zeros(3, np.int64)
    return nz.min(axis=0).astype(np.int64), (nz.max(axis=0) + 1).astype(np.int64)


def solve_lengths(T, cfg: BoundaryConfig, h: ScalarGrid, tol: float = 1e-6,
                  max_sweeps: int = 400, stagnant=None, raise_on_fail: bool = True):
    """Path lengths to the inner (L0) and outer (L1) boundaries.

    Symmetric Gauss-Seidel: each cycle visits the region in all 8 axis
    direction orders. Upwind neighbours are picked by the sign of the
    tangent components and must also be upstream in ``h``. Stops when a
    full cycle changes no value by more than ``tol`` (both fields).
    Returns ``(L0, L1, report)``.
    """
    labels = cfg.labels()
    hv = np.ascontiguousarray(h.values)
    if stagnant is None:
        stagnant = np.zeros(labels.shape, dtype=bool)
    stagnant = np.ascontiguousarray(stagnant, dtype=np.bool_)
    T0, T1, T2 = (np.ascontiguousarray(t.values) for t in T)
    inv_d = 1.0 / np.asarray(cfg.region.spacing, dtype=float)
    dmin = float(min(cfg.region.spacing))
    lo, hi = _bbox(cfg.region.occupancy)
    L0 = np.zeros(labels.shape)
    L1 = np.zeros(labels.shape)
    # boundary voxels beyond a known surface start at their (negative)
    # signed distance, so lengths are measured from the surface itself
    if cfg.inner_sdf is not None:
        L0[cfg.inner.occupancy] = np.minimum(cfg.inner_sdf[cfg.inner.occupancy], 0.0)
    if cfg.outer_sdf is not None:
        L1[cfg.outer.occupancy] = np.minimum(cfg.outer_sdf[cfg.outer.occupancy], 0.0)
    history = []
    sweeps = 0
    change = 0.0
    converged = not cfg.region.occupancy.any()
    while not converged and sweeps < max_sweeps:
        change = 0.0
        for order in SWEEP_ORDERS:
            o = np.array(order, dtype=np.int64)
            c0 = _kernels.length_sweep(L0, labels, hv, stagnant, T0, T1, T2, 1, _kernels.INNER,
                                       o, lo, hi, inv_d, dmin)
            c1 = _kernels.length_sweep(L1, labels, hv, stagnant, T0, T1, T2, -1, _kernels.OUTER,
                                       o, lo, hi, inv_d, dmin)
            change = max(change, c0, c1)
            sweeps += 1
        history.append(float(change))
        converged = change < tol
    report = SolveReport(sweeps, float(change), converged, history)
    # the seeds were only an integration device: boundaries report zero
    outside = ~cfg.region.occupancy
    L0[outside] = 0.0
    L1[outside] = 0.0
    g0, g1 = grid_like(cfg.region, L0), grid_like(cfg.region, L1)
    if not converged and raise_on_fail:
        raise NotConverged(f"length sweeps changed by {change:.3g} after {sweeps} passes",
                           (g0, g1), report)
    return g0, g1, report


# ------------------------------------------------------------------ feature

def feature_field(cfg: BoundaryConfig, G: ScalarGrid) -> ScalarGrid:
    """``R / G`` inside the region, 0 elsewhere."""
    inside = cfg.region.occupancy
    g = G.values
    if np.any(g[inside] <= 0):
        raise NonPositiveG(f"{int((g[inside] <= 0).sum())} region voxels have G <= 0")
    f = np.zeros_like(g)
    f[inside] = cfg.radius / g[inside]
    return grid_like(G, f)


def compute_fields(cfg: BoundaryConfig, laplace_tol: float = 0.5, max_iters: int = 5000,
                   length_tol: float = 1e-6, max_sweeps: int = 400,
                   eps: float = 1e-9) -> GeodesicFields:
    h, lap = solve_laplace(cfg, laplace_tol, max_iters)
    T, stagnant = tangent_field(h, cfg.region, eps)
    if stagnant.any():
        log.info("%d stagnant voxels (zero gradient)", int(stagnant.sum()))
    L0, L1, lrep = solve_lengths(T, cfg, h, length_tol, max_sweeps, stagnant)
    G = grid_like(L0, L0.values + L1.values)
    feat = feature_field(cfg, G)
    return GeodesicFields(h, T, L0, L1, G, feat, stagnant, lap, lrep)


def report_dict(cfg: BoundaryConfig, fields: GeodesicFields) -> dict:
    return {
        "iterations": fields.laplace.iterations,
        "residual": fields.laplace.residual,
        "length_sweeps": fields.lengths.iterations,
        "length_residual": fields.lengths.residual,
        "stagnant_count": fields.stagnant_count,
        "R": cfg.radius,
        "center": list(cfg.center),
        "radius_grown": cfg.grown,
    }


# ------------------------------------------------------------ surface values

@dataclass
class SurfaceSample:
    values: np.ndarray
    projected: dict          # vertex index -> projection distance (mm)
    out_of_domain: list      # vertex indices outside the grid


def surface_feature(points, fields: GeodesicFields, cfg: BoundaryConfig) -> SurfaceSample:
    """Feature at arbitrary points (typically mesh vertices).

    Trilinear interpolation restricted to region corners (weights
    renormalised), so boundary voxels carrying no feature never dilute the
    value. A point whose cell has no region corner is moved to the nearest
    region voxel centre. Points outside the grid get NaN and are listed.
    """
    pts = np.asarray(getattr(points, "points", points), dtype=float).reshape(-1, 3)
    feat = fields.feat
    inside = cfg.region.occupancy
    near = None
    vals = np.full(len(pts), np.nan)
    projected = {}
    outside = []
    for n, p in enumerate(pts):
        try:
            idx, w = trilinear_weights(feat, p)
        except OutOfDomain:
            outside.append(n)
            continue
        m = inside[idx[:, 0], idx[:, 1], idx[:, 2]]
        wm = w * m
        if wm.sum() > 1e-12:
            vals[n] = float(np.dot(wm, feat.values[idx[:, 0], idx[:, 1], idx[:, 2]]) / wm.sum())
            continue
        if near is None:
            _, near = ndimage.distance_transform_edt(~inside, sampling=feat.spacing,
                                                     return_indices=True)
        c = np.rint(feat.world_to_index(p)).astype(int)
        c = np.clip(c, 0, np.asarray(feat.dims) - 1)
        q = near[:, c[0], c[1], c[2]]
        vals[n] = float(feat.values[q[0], q[1], q[2]])
        projected[n] = float(np.linalg.norm(feat.index_to_world(q) - p))
    if outside:
        log.warning("%d points outside the grid", len(outside))
    return SurfaceSample(vals, projected, outside)


def shell_feature(fields: GeodesicFields, cfg: BoundaryConfig):
    """Feature on the shape voxels peeled off by erosion: ``(centres, values)``."""
    if cfg.shape is None:
        raise InvalidInput("boundary config carries no shape mask")
    shell = cfg.shape.occupancy & cfg.region.occupancy
    return cfg.region.voxel_centers(shell), fields.feat.values[shell]


def trace_streamline(T, region: BinaryMask, seed, step: float = 0.25, max_steps: int = 2000,
                     direction: float = 1.0) -> np.ndarray:
    """Follow the tangent field from ``seed`` (world coordinates) with midpoint steps.

    Stops once the nearest voxel leaves the region or the field vanishes.
    Returns the visited points, seed first.
    """
    inside = region.occupancy
    dims = np.asarray(region.dims)

    def tangent(p):
        try:
            v = np.array([sample_trilinear_masked(t, inside, p) for t in T])
        except OutOfDomain:
            return None
        n = np.linalg.norm(v)
        return None if n < 1e-12 else direction * v / n

    def in_region(p):
        c = np.rint(region.world_to_index(p)).astype(int)
        return bool(np.all(c >= 0) and np.all(c < dims) and inside[c[0], c[1], c[2]])

    pts = [np.asarray(seed, dtype=float)]
    for _ in range(max_steps):
        p = pts[-1]
        t0 = tangent(p)
        if t0 is None:
            break
        t1 = tangent(p + 0.5 * step * t0)
        if t1 is None:
            break
        q = p + step * t1
        if not in_region(q):
            break
        pts.append(q)
    return np.array(pts)


def sample_trilinear_masked(field: ScalarGrid, inside: np.ndarray, p) -> float:
    """Trilinear sample using only corners where ``inside`` holds (weights renormalised)."""
    idx, w = trilinear_weights(field, p)
    m = inside[idx[:, 0], idx[:, 1], idx[:, 2]]
    wm = w * m
    s = wm.sum()
    if s <= 1e-12:
        raise OutOfDomain("no region corner around the point")
    return float(np.dot(wm, field.values[idx[:, 0], idx[:, 1], idx[:, 2]]) / s)
