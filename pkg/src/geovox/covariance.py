"""Local covariance eigenfeatures of point clouds (baseline descriptor)."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInput

FEATURE_NAMES = ("anisotropy", "omnivariance", "linearity", "planarity", "sphericity", "curvature")


def _pts(points) -> np.ndarray:
    return np.asarray(getattr(points, "points", points), dtype=float).reshape(-1, 3)


def _ordered_neighbours(pts, tree, p, k, dist, idx):
    """Lexicographic (distance, index) selection with self excluded; widens
    the query when a tie straddles the cut-off."""
    keep = idx != p
    dist, idx = dist[keep], idx[keep]
    order = np.lexsort((idx, dist))
    dist, idx = dist[order], idx[order]
    if len(idx) > k and dist[k] > dist[k - 1]:
        return idx[:k]
    # ties may continue past what was fetched: gather the whole shell
    cand = np.array(tree.query_ball_point(pts[p], dist[k - 1] * (1 + 1e-12) + 1e-300), dtype=np.int64)
    cand = cand[cand != p]
    d = np.linalg.norm(pts[cand] - pts[p], axis=1)
    order = np.lexsort((cand, d))
    return cand[order][:k]


def knn_all(points, k: int) -> np.ndarray:
    """``(n, k)`` exact nearest neighbours of every point, self excluded,
    ties broken by lower index."""
    pts = _pts(points)
    n = len(pts)
    if not 0 < k < n:
        raise InvalidInput(f"need 0 < k < point count ({n}), got k={k}")
    tree = cKDTree(pts)
    fetch = min(n, k + 2)
    dist, idx = tree.query(pts, k=fetch)
    out = np.empty((n, k), dtype=np.int64)
    for p in range(n):
        out[p] = _ordered_neighbours(pts, tree, p, k, dist[p], idx[p])
    return out


def knn(points, p_index: int, k: int) -> np.ndarray:
    pts = _pts(points)
    n = len(pts)
    if not 0 < k < n:
        raise InvalidInput(f"need 0 < k < point count ({n}), got k={k}")
    if not 0 <= p_index < n:
        raise InvalidInput("point index out of range")
    tree = cKDTree(pts)
    dist, idx = tree.query(pts[p_index], k=min(n, k + 2))
    return _ordered_neighbours(pts, tree, p_index, k, np.atleast_1d(dist), np.atleast_1d(idx))


def local_covariance(points, neighbor_indices) -> np.ndarray:
    """Population covariance (1/k normalisation) of the neighbour positions."""
    nb = _pts(points)[np.asarray(neighbor_indices, dtype=np.int64)]
    if len(nb) < 3:
        raise InvalidInput("local covariance needs at least 3 neighbours")
    d = nb - nb.mean(axis=0)
    return d.T @ d / len(nb)


def symmetric_eigvals(C) -> np.ndarray:
    """Ascending eigenvalues of symmetric 3x3 matrices (trigonometric closed form).

    Accepts ``(3, 3)`` or ``(n, 3, 3)``.
    """
    A = np.asarray(C, dtype=float)
    single = A.ndim == 2
    A = A.reshape(-1, 3, 3)
    # unit-scale each matrix so the cross products below cannot under/overflow
    # (a power of two, so diagonal input still comes back bit-exact)
    scale = np.ldexp(1.0, np.frexp(np.abs(A).max(axis=(1, 2)))[1])
    A = A / scale[:, None, None]
    a00, a11, a22 = A[:, 0, 0], A[:, 1, 1], A[:, 2, 2]
    a01, a02, a12 = A[:, 0, 1], A[:, 0, 2], A[:, 1, 2]
    p1 = a01 ** 2 + a02 ** 2 + a12 ** 2
    q = (a00 + a11 + a22) / 3.0
    p2 = (a00 - q) ** 2 + (a11 - q) ** 2 + (a22 - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    out = np.empty((len(A), 3))
    diag = p1 == 0
    out[diag] = np.sort(np.stack([a00, a11, a22], axis=1)[diag], axis=1)
    iso = ~diag & (p == 0)
    out[iso] = q[iso, None]
    gen = ~diag & ~iso
    if gen.any():
        pg, qg = p[gen], q[gen]
        B = (A[gen] - qg[:, None, None] * np.eye(3)) / pg[:, None, None]
        r = np.clip(np.linalg.det(B) / 2.0, -1.0, 1.0)
        phi = np.arccos(r) / 3.0
        big = qg + 2.0 * pg * np.cos(phi)
        small = qg + 2.0 * pg * np.cos(phi + 2.0 * np.pi / 3.0)
        # Only the eigenvalue far from the other two is accurate to machine
        # precision; the remaining pair comes from the 2x2 block on the
        # orthogonal complement of its eigenvector.
        iso = np.where(r >= 0, big, small)
        Ag = A[gen]
        M = Ag - iso[:, None, None] * np.eye(3)
        cands = np.stack([np.cross(M[:, 0], M[:, 1]), np.cross(M[:, 0], M[:, 2]),
                          np.cross(M[:, 1], M[:, 2])], axis=1)
        pick = np.argmax(np.einsum("nij,nij->ni", cands, cands), axis=1)
        v = cands[np.arange(len(cands)), pick]
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        helper = np.where(np.abs(v[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
        u1 = np.cross(v, helper)
        u1 /= np.linalg.norm(u1, axis=1, keepdims=True)
        u2 = np.cross(v, u1)
        b00 = np.einsum("ni,nij,nj->n", u1, Ag, u1)
        b11 = np.einsum("ni,nij,nj->n", u2, Ag, u2)
        b01 = np.einsum("ni,nij,nj->n", u1, Ag, u2)
        mean = 0.5 * (b00 + b11)
        half = np.hypot(0.5 * (b00 - b11), b01)
        out[gen] = np.sort(np.stack([iso, mean - half, mean + half], axis=1), axis=1)
    out *= scale[:, None]
    return out[0] if single else out


@dataclass
class EigenFeatures:
    lambdas: np.ndarray        # (..., 3) ascending, clamped at 0
    anisotropy: np.ndarray
    omnivariance: np.ndarray
    linearity: np.ndarray
    planarity: np.ndarray
    sphericity: np.ndarray
    curvature: np.ndarray
    degenerate: np.ndarray     # lambda3 == 0: ratio features set to 0

    def table(self) -> np.ndarray:
        """``(n, 9)`` array: three eigenvalues then the six features."""
        cols = [np.atleast_1d(getattr(self, name)) for name in FEATURE_NAMES]
        return np.column_stack([np.atleast_2d(self.lambdas)] + cols)


def features_from_eigvals(lam) -> EigenFeatures:
    lam = np.clip(np.sort(np.asarray(lam, dtype=float), axis=-1), 0.0, None)
    l1, l2, l3 = lam[..., 0], lam[..., 1], lam[..., 2]
    deg = l3 <= 0
    safe = np.where(deg, 1.0, l3)
    total = np.where(deg, 1.0, l1 + l2 + l3)

    def ratio(x):
        return np.where(deg, 0.0, x)

    return EigenFeatures(
        lambdas=lam,
        anisotropy=ratio((l3 - l1) / safe),
        # cube root of the product of all three eigenvalues
        omnivariance=np.cbrt(l1 * l2 * l3),
        linearity=ratio((l3 - l2) / safe),
        planarity=ratio((l2 - l1) / safe),
        sphericity=ratio(l1 / safe),
        curvature=ratio(l1 / total),
        degenerate=deg,
    )


def eigenfeatures(C) -> EigenFeatures:
    A = np.asarray(C, dtype=float)
    if A.shape[-2:] != (3, 3):
        raise InvalidInput("covariance must be 3x3")
    scale = max(1.0, float(np.abs(A).max()) if A.size else 1.0)
    if np.abs(A - np.swapaxes(A, -1, -2)).max() > 1e-9 * scale:
        raise InvalidInput("covariance matrix is not symmetric")
    lam = symmetric_eigvals(A)
    if np.any(lam[..., 0] < -1e-9 * scale):
        raise InvalidInput("covariance matrix is not positive semi-definite")
    return features_from_eigvals(lam)


def pointwise_features(points, k: int = 4) -> EigenFeatures:
    pts = _pts(points)
    if k < 3:
        raise InvalidInput("k must be at least 3")
    nbrs = knn_all(pts, k)
    nb = pts[nbrs]                                   # (n, k, 3)
    d = nb - nb.mean(axis=1, keepdims=True)
    C = np.einsum("nki,nkj->nij", d, d) / k
    return eigenfeatures(C)


def write_features_csv(points, feats: EigenFeatures, path) -> None:
    pts = _pts(points)
    table = feats.table()
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point_index", "x", "y", "z", "lambda1", "lambda2", "lambda3", *FEATURE_NAMES])
        for i, (p, row) in enumerate(zip(pts, table)):
            w.writerow([i, *(repr(float(x)) for x in p), *(repr(float(x)) for x in row)])
