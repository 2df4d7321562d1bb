"""Dense voxel containers, cross-element morphology, sampling and ``.vgf`` I/O.

Arrays are stored with shape ``(nx, ny, nz)`` and indexed ``[i, j, k]``; the
on-disk payload is x-fastest, i.e. ``values.ravel(order="F")``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DegenerateShape, FormatError, InvalidInput, OutOfDomain

CROSS = ndimage.generate_binary_structure(3, 1)

VGF_MAGIC = b"VGF1"
_HEADER = struct.Struct("<4s3I3f3fB")
DTYPE_F32 = 0
DTYPE_MASK = 1
DTYPE_F64 = 2
_MAX_VOXELS = 1 << 31


def _as_triple(v, name, positive=False):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise InvalidInput(f"{name} must have 3 components, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} must be finite")
    if positive and np.any(arr <= 0):
        raise InvalidInput(f"{name} must be positive, got {arr}")
    return tuple(float(x) for x in arr)


@dataclass(frozen=True, eq=False)
class _Lattice:
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self._array.shape)

    def index_to_world(self, idx):
        idx = np.asarray(idx, dtype=float)
        return np.asarray(self.origin) + idx * np.asarray(self.spacing)

    def world_to_index(self, p):
        p = np.asarray(p, dtype=float)
        return (p - np.asarray(self.origin)) / np.asarray(self.spacing)

    def same_lattice(self, other) -> bool:
        return (self.dims == other.dims and self.spacing == other.spacing
                and self.origin == other.origin)

    def voxel_centers(self, where=None) -> np.ndarray:
        """World coordinates of voxel centres, optionally restricted to a boolean array."""
        if where is None:
            where = np.ones(self.dims, dtype=bool)
        idx = np.argwhere(where)
        return self.index_to_world(idx)


@dataclass(frozen=True, eq=False)
class ScalarGrid(_Lattice):
    values: np.ndarray = field(default=None, kw_only=True)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.ndim != 3:
            raise InvalidInput("values must be a 3D array")
        if min(vals.shape) < 3:
            raise InvalidInput(f"every axis needs at least 3 voxels, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise InvalidInput("grid values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "spacing", _as_triple(self.spacing, "spacing", positive=True))
        object.__setattr__(self, "origin", _as_triple(self.origin, "origin"))

    @property
    def _array(self):
        return self.values

    def with_values(self, values) -> "ScalarGrid":
        return ScalarGrid(self.spacing, self.origin, values=values)


@dataclass(frozen=True, eq=False)
class BinaryMask(_Lattice):
    occupancy: np.ndarray = field(default=None, kw_only=True)

    def __post_init__(self):
        occ = np.array(self.occupancy, dtype=bool, copy=True)
        if occ.ndim != 3:
            raise InvalidInput("occupancy must be a 3D array")
        if min(occ.shape) < 1:
            raise InvalidInput("empty grid")
        occ.flags.writeable = False
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "spacing", _as_triple(self.spacing, "spacing", positive=True))
        object.__setattr__(self, "origin", _as_triple(self.origin, "origin"))

    @property
    def _array(self):
        return self.occupancy

    def with_occupancy(self, occupancy) -> "BinaryMask":
        return BinaryMask(self.spacing, self.origin, occupancy=occupancy)

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.same_lattice(other) and np.array_equal(self.occupancy, other.occupancy)

    def __hash__(self):
        return id(self)

    def issubset(self, other: "BinaryMask") -> bool:
        return not np.any(self.occupancy & ~other.occupancy)


def complement(mask: BinaryMask) -> BinaryMask:
    return mask.with_occupancy(~mask.occupancy)


def pad(obj, n: int, value=0):
    """Grow a grid or mask by ``n`` voxels on every side, keeping world positions fixed."""
    if n < 0:
        raise InvalidInput("padding must be non-negative")
    origin = tuple(o - n * s for o, s in zip(obj.origin, obj.spacing))
    if isinstance(obj, BinaryMask):
        return BinaryMask(obj.spacing, origin,
                          occupancy=np.pad(obj.occupancy, n, constant_values=bool(value)))
    return ScalarGrid(obj.spacing, origin,
                      values=np.pad(obj.values, n, constant_values=float(value)))


def _points_array(points) -> np.ndarray:
    pts = getattr(points, "points", points)
    pts = np.asarray(pts, dtype=float)
    if pts.size == 0:
        raise InvalidInput("point set is empty")
    return pts.reshape(-1, 3)


def fill_holes(occ: np.ndarray) -> np.ndarray:
    """Invert everything not 6-connected to the grid border."""
    return ndimage.binary_fill_holes(occ, structure=CROSS)


def voxelize(points, spacing: float = 1.0, padding: int = 2, closing: int = 2) -> BinaryMask:
    """Rasterise a point cloud and turn it into a solid mask.

    The grid covers the point bounding box plus ``padding`` voxels per side.
    Occupied cells are dilated ``closing`` times with the cross element, the
    exterior is flood-filled from the border (6-connectivity) and everything
    unreached becomes solid, then the result is eroded ``closing`` times.
    """
    pts = _points_array(points)
    if not np.all(np.isfinite(pts)):
        raise InvalidInput("points must be finite")
    if spacing <= 0:
        raise InvalidInput("spacing must be positive")
    if padding < 0 or closing < 0:
        raise InvalidInput("padding and closing must be non-negative")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    origin = lo - padding * spacing
    dims = np.rint((hi - lo) / spacing).astype(int) + 1 + 2 * padding
    dims = np.maximum(dims, 3)
    idx = np.rint((pts - origin) / spacing).astype(int)
    idx = np.clip(idx, 0, dims - 1)

    # work on a temporary halo so dilation never clips at the grid edge
    halo = closing + 1
    occ = np.zeros(tuple(dims + 2 * halo), dtype=bool)
    occ[idx[:, 0] + halo, idx[:, 1] + halo, idx[:, 2] + halo] = True
    if closing:
        occ = ndimage.binary_dilation(occ, structure=CROSS, iterations=closing)
    occ = fill_holes(occ)
    if closing:
        occ = ndimage.binary_erosion(occ, structure=CROSS, iterations=closing, border_value=0)
    occ = occ[halo:-halo, halo:-halo, halo:-halo]
    if not occ.any():
        raise DegenerateShape("voxelisation produced an empty mask")
    return BinaryMask((spacing,) * 3, tuple(origin), occupancy=occ)


def erode_cross(mask: BinaryMask, iterations: int = 1) -> BinaryMask:
    if iterations < 1:
        raise InvalidInput("iterations must be positive")
    if not mask.occupancy.any():
        raise InvalidInput("cannot erode an empty mask")
    occ = ndimage.binary_erosion(mask.occupancy, structure=CROSS,
                                 iterations=iterations, border_value=0)
    if not occ.any():
        raise DegenerateShape(
            f"shape vanishes after {iterations} erosion(s); reduce the erosion count")
    return mask.with_occupancy(occ)


def dilate_cross(mask: BinaryMask, iterations: int = 1) -> BinaryMask:
    occ = ndimage.binary_dilation(mask.occupancy, structure=CROSS,
                                  iterations=iterations, border_value=0)
    return mask.with_occupancy(occ)


def gradient(field: ScalarGrid, region: BinaryMask | None = None):
    """Finite-difference gradient restricted to ``region``.

    Central differences where both axis neighbours are in the region,
    one-sided where only one is, zero where neither is. Voxels outside the
    region get 0.
    """
    f = field.values
    inside = (np.ones(f.shape, dtype=bool) if region is None
              else np.asarray(region.occupancy, dtype=bool))
    out = []
    for axis, h in enumerate(field.spacing):
        fwd_in = np.zeros_like(inside)
        bwd_in = np.zeros_like(inside)
        fwd_val = np.zeros_like(f)
        bwd_val = np.zeros_like(f)
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        fwd_in[lo] = inside[hi]
        fwd_val[lo] = f[hi]
        bwd_in[hi] = inside[lo]
        bwd_val[hi] = f[lo]
        g = np.zeros_like(f)
        both = fwd_in & bwd_in
        g[both] = (fwd_val[both] - bwd_val[both]) / (2.0 * h)
        only_f = fwd_in & ~bwd_in
        g[only_f] = (fwd_val[only_f] - f[only_f]) / h
        only_b = bwd_in & ~fwd_in
        g[only_b] = (f[only_b] - bwd_val[only_b]) / h
        g[~inside] = 0.0
        out.append(field.with_values(g))
    return tuple(out)


def _trilinear_corners(field, p):
    u = field.world_to_index(p)
    dims = np.asarray(field.dims)
    tol = 1e-9
    if np.any(u < -tol) or np.any(u > dims - 1 + tol):
        raise OutOfDomain(f"point {tuple(np.asarray(p))} lies outside the grid")
    u = np.clip(u, 0, dims - 1)
    i0 = np.minimum(np.floor(u).astype(int), dims - 2)
    return i0, u - i0


def trilinear_weights(field, p):
    """Corner indices (8x3) and weights (8,) for trilinear interpolation at ``p``."""
    i0, t = _trilinear_corners(field, p)
    idx = []
    w = []
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                idx.append((i0[0] + dx, i0[1] + dy, i0[2] + dz))
                w.append((t[0] if dx else 1 - t[0]) * (t[1] if dy else 1 - t[1])
                         * (t[2] if dz else 1 - t[2]))
    return np.array(idx), np.array(w)


def sample_trilinear(field: ScalarGrid, p) -> float:
    idx, w = trilinear_weights(field, p)
    vals = field.values[idx[:, 0], idx[:, 1], idx[:, 2]]
    return float(np.dot(w, vals))


# --------------------------------------------------------------------------- I/O

def write_grid(obj, path, dtype: str = "f64") -> None:
    """Write a ScalarGrid (``dtype`` "f64" or "f32") or a BinaryMask to ``.vgf``."""
    if isinstance(obj, BinaryMask):
        tag = DTYPE_MASK
        payload = obj.occupancy.astype("<u1").ravel(order="F").tobytes()
    elif dtype == "f64":
        tag = DTYPE_F64
        payload = obj.values.astype("<f8").ravel(order="F").tobytes()
    elif dtype == "f32":
        tag = DTYPE_F32
        payload = obj.values.astype("<f4").ravel(order="F").tobytes()
    else:
        raise InvalidInput(f"unknown dtype {dtype!r}")
    header = _HEADER.pack(VGF_MAGIC, *obj.dims, *obj.spacing, *obj.origin, tag)
    Path(path).write_bytes(header + payload)


def read_grid(path):
    """Read a ``.vgf`` file; returns a BinaryMask for tag 1, else a ScalarGrid."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("file shorter than the VGF header")
    magic, nx, ny, nz, sx, sy, sz, ox, oy, oz, tag = _HEADER.unpack_from(data)
    if magic != VGF_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    n = nx * ny * nz
    if n == 0 or n >= _MAX_VOXELS:
        raise FormatError(f"implausible dims {(nx, ny, nz)}")
    width = {DTYPE_F32: 4, DTYPE_MASK: 1, DTYPE_F64: 8}.get(tag)
    if width is None:
        raise FormatError(f"unknown dtype tag {tag}")
    body = data[_HEADER.size:]
    if len(body) != n * width:
        raise FormatError(f"payload holds {len(body)} bytes, expected {n * width}")
    spacing = (sx, sy, sz)
    origin = (ox, oy, oz)
    try:
        if tag == DTYPE_MASK:
            arr = np.frombuffer(body, dtype="<u1").reshape((nx, ny, nz), order="F")
            return BinaryMask(spacing, origin, occupancy=arr.astype(bool))
        arr = np.frombuffer(body, dtype="<f4" if tag == DTYPE_F32 else "<f8")
        return ScalarGrid(spacing, origin, values=arr.reshape((nx, ny, nz), order="F"))
    except InvalidInput as exc:
        raise FormatError(str(exc)) from exc
