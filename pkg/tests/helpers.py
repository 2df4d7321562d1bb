"""Shared oracle geometries for the test-suite."""
import numpy as np

from geovox import eulerian
from geovox.grids import BinaryMask

R_IN, R_OUT, N = 5.0, 13.0, 33


def concentric_config(n=N, r_in=R_IN, r_out=R_OUT):
    """Boundary configuration of two concentric spheres with analytic distances."""
    c = (n - 1) / 2.0
    idx = np.indices((n, n, n), dtype=float)
    r = np.sqrt(sum((idx[a] - c) ** 2 for a in range(3)))
    inner = r <= r_in
    outer = r >= r_out
    region = ~(inner | outer)
    mk = lambda occ: BinaryMask((1.0, 1.0, 1.0), (0.0, 0.0, 0.0), occupancy=occ)
    cfg = eulerian.BoundaryConfig(
        inner=mk(inner), outer=mk(outer), region=mk(region), center=(c, c, c), radius=r_out,
        inner_sdf=r - r_in, outer_sdf=r_out - r)
    return cfg, r


def analytic_h(r, r_in=R_IN, r_out=R_OUT, lo=0.0, hi=1.0e4):
    b = (hi - lo) / (1.0 / r_out - 1.0 / r_in)
    a = lo - b / r_in
    return a + b / r


def slab_config(width=61, gap=10):
    """Flat inner plane at k = 1 and outer plane at k = 1 + gap.

    Rim voxels between the planes take the label of the nearer plane; the
    slab is wide enough that the rim does not reach the central column.
    """
    nz = gap + 3
    k = np.arange(nz)[None, None, :] * np.ones((width, width, 1))
    inner = k <= 1
    outer = k >= 1 + gap
    rim = np.zeros_like(inner)
    rim[[0, -1], :, :] = True
    rim[:, [0, -1], :] = True
    mid = 1 + gap / 2.0
    inner |= rim & (k < mid)
    outer |= rim & (k >= mid)
    region = ~(inner | outer)
    mk = lambda occ: BinaryMask((1.0, 1.0, 1.0), (0.0, 0.0, 0.0), occupancy=occ)
    c = (width - 1) / 2.0
    return eulerian.BoundaryConfig(inner=mk(inner), outer=mk(outer), region=mk(region),
                                   center=(c, c, mid), radius=float(gap))


def ball_mask(radius, pad=3, spacing=1.0):
    n = int(np.ceil(2 * radius / spacing)) + 1 + 2 * pad
    c = (n - 1) / 2.0
    idx = np.indices((n, n, n), dtype=float)
    r = np.sqrt(sum((idx[a] - c) ** 2 for a in range(3))) * spacing
    return BinaryMask((spacing,) * 3, (-c * spacing,) * 3, occupancy=r <= radius)


def box_mask(shape, pad=3):
    occ = np.zeros(tuple(s + 2 * pad for s in shape), dtype=bool)
    occ[pad:pad + shape[0], pad:pad + shape[1], pad:pad + shape[2]] = True
    return BinaryMask((1.0, 1.0, 1.0), (0.0, 0.0, 0.0), occupancy=occ)


def brute_knn(points, p, k):
    d = np.linalg.norm(points - points[p], axis=1)
    cand = [(d[i], i) for i in range(len(points)) if i != p]
    cand.sort()
    return [i for _, i in cand[:k]]
