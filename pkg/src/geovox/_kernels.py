"""Compiled inner loops for the relaxation solvers.

Voxel labels: 0 = region, 1 = inner boundary, 2 = outer boundary.
Region voxels never touch the grid edge (checked by the caller).
"""
import warnings

import numba as nb
import numpy as np

# numba falls back to another threading layer by itself; the notice is noise
warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

REGION = 0
INNER = 1
OUTER = 2


@nb.njit(parallel=True, cache=True)
def jacobi_step(h, h_new, idx, nbr, coef, const):
    """One Jacobi sweep over the flat region indices ``idx``.

    Each voxel becomes ``sum(coef * h[nbr]) + const`` where ``nbr`` holds
    flat neighbour indices (-1 marks a term folded into ``const``) and the
    coefficients are pre-normalised. Reads only ``h``; deterministic.
    Returns the max absolute change.
    """
    flat = h.ravel()
    out = h_new.ravel()
    n = idx.shape[0]
    change = np.zeros(n)
    for m in nb.prange(n):
        v = const[m]
        for q in range(6):
            t = nbr[m, q]
            if t >= 0:
                v += coef[m, q] * flat[t]
        p = idx[m]
        out[p] = v
        change[m] = abs(v - flat[p])
    return change.max() if n else 0.0


@nb.njit(cache=True)
def _neighbour(i, j, k, a, step):
    if a == 0:
        return i + step, j, k
    if a == 1:
        return i, j + step, k
    return i, j, k + step


@nb.njit(cache=True)
def _usable(labels, h, own, sign, i, j, k, ii, jj, kk):
    # a neighbour feeds the update only if it lies strictly upstream in h,
    # which keeps the dependency graph acyclic
    lab = labels[ii, jj, kk]
    if lab == own:
        return True
    if lab != REGION:
        return False
    return sign * (h[i, j, k] - h[ii, jj, kk]) > 0.0


@nb.njit(cache=True)
def _upwind_value(L, labels, h, i, j, k, T0, T1, T2, own, sign, inv_d):
    """Upwind update of one voxel; returns -1 if no usable stencil."""
    num = 1.0
    den = 0.0
    t = (T0, T1, T2)
    for a in range(3):
        ta = t[a]
        if ta == 0.0:
            continue
        s = 1 if ta > 0 else -1
        ii, jj, kk = _neighbour(i, j, k, a, -sign * s)
        if not _usable(labels, h, own, sign, i, j, k, ii, jj, kk):
            continue
        wa = abs(ta) * inv_d[a]
        num += wa * L[ii, jj, kk]
        den += wa
    if den == 0.0:
        return -1.0
    return num / den


@nb.njit(cache=True)
def _fallback_value(L, labels, h, stagnant, i, j, k, own, sign, dmin):
    best = -1.0
    for a in range(3):
        for s in (-1, 1):
            ii, jj, kk = _neighbour(i, j, k, a, s)
            if not _usable(labels, h, own, sign, i, j, k, ii, jj, kk):
                continue
            if labels[ii, jj, kk] == REGION and stagnant[ii, jj, kk]:
                continue
            if L[ii, jj, kk] > best:
                best = L[ii, jj, kk]
    if best < 0.0:
        return -1.0
    return best + dmin


@nb.njit(cache=True)
def length_sweep(L, labels, h, stagnant, T0, T1, T2, sign, own, order, lo, hi, inv_d, dmin):
    """One in-place Gauss-Seidel pass.

    ``sign`` = +1 integrates L0 (neighbours at m - sgn(T_m)), ``sign`` = -1
    integrates L1 (neighbours at m + sgn(T_m)). ``order`` gives the visit
    direction (+1/-1) along each axis. Stagnant voxels, and voxels whose
    stencil has no usable neighbour, take the largest upstream neighbour
    value plus ``dmin``. Returns the max absolute change.
    """
    change = 0.0
    ri = range(lo[0], hi[0]) if order[0] > 0 else range(hi[0] - 1, lo[0] - 1, -1)
    rj = range(lo[1], hi[1]) if order[1] > 0 else range(hi[1] - 1, lo[1] - 1, -1)
    rk = range(lo[2], hi[2]) if order[2] > 0 else range(hi[2] - 1, lo[2] - 1, -1)
    for i in ri:
        for j in rj:
            for k in rk:
                if labels[i, j, k] != REGION:
                    continue
                v = -1.0
                if not stagnant[i, j, k]:
                    v = _upwind_value(L, labels, h, i, j, k,
                                      T0[i, j, k], T1[i, j, k], T2[i, j, k], own, sign, inv_d)
                if v < 0.0:
                    v = _fallback_value(L, labels, h, stagnant, i, j, k, own, sign, dmin)
                if v < 0.0:
                    continue
                d = abs(v - L[i, j, k])
                if d > change:
                    change = d
                L[i, j, k] = v
    return change


# ---------------------------------------------------------------- LDDMM
# Every output row is reduced sequentially by one thread, so results do not
# depend on the thread count.


@nb.njit(parallel=True, cache=True)
def geodesic_rhs(q, mu, inv_s2, dq, dmu):
    """Right-hand side of the geodesic equations for Gaussian kernels."""
    n = q.shape[0]
    for i in nb.prange(n):
        a0 = a1 = a2 = 0.0
        b0 = b1 = b2 = 0.0
        for j in range(n):
            d0 = q[i, 0] - q[j, 0]
            d1 = q[i, 1] - q[j, 1]
            d2 = q[i, 2] - q[j, 2]
            kij = np.exp(-(d0 * d0 + d1 * d1 + d2 * d2) * inv_s2)
            a0 += kij * mu[j, 0]
            a1 += kij * mu[j, 1]
            a2 += kij * mu[j, 2]
            kp = kij * (mu[i, 0] * mu[j, 0] + mu[i, 1] * mu[j, 1] + mu[i, 2] * mu[j, 2])
            b0 += kp * d0
            b1 += kp * d1
            b2 += kp * d2
        dq[i, 0] = a0
        dq[i, 1] = a1
        dq[i, 2] = a2
        c = 2.0 * inv_s2
        dmu[i, 0] = c * b0
        dmu[i, 1] = c * b1
        dmu[i, 2] = c * b2


@nb.njit(parallel=True, cache=True)
def geodesic_rhs_vjp(q, mu, alpha, beta, inv_s2, gq, gmu):
    """Vector-Jacobian product of ``geodesic_rhs`` with cotangent (alpha, beta)."""
    n = q.shape[0]
    c2 = 2.0 * inv_s2
    c4 = 4.0 * inv_s2 * inv_s2
    for l in nb.prange(n):
        m0 = m1 = m2 = 0.0
        g0 = g1 = g2 = 0.0
        for j in range(n):
            d0 = q[l, 0] - q[j, 0]
            d1 = q[l, 1] - q[j, 1]
            d2 = q[l, 2] - q[j, 2]
            klj = np.exp(-(d0 * d0 + d1 * d1 + d2 * d2) * inv_s2)
            p = mu[l, 0] * mu[j, 0] + mu[l, 1] * mu[j, 1] + mu[l, 2] * mu[j, 2]
            a = (alpha[l, 0] * mu[j, 0] + alpha[l, 1] * mu[j, 1] + alpha[l, 2] * mu[j, 2]
                 + alpha[j, 0] * mu[l, 0] + alpha[j, 1] * mu[l, 1] + alpha[j, 2] * mu[l, 2])
            e0 = beta[l, 0] - beta[j, 0]
            e1 = beta[l, 1] - beta[j, 1]
            e2 = beta[l, 2] - beta[j, 2]
            b = e0 * d0 + e1 * d1 + e2 * d2
            wm = c2 * klj * b
            m0 += klj * alpha[j, 0] + wm * mu[j, 0]
            m1 += klj * alpha[j, 1] + wm * mu[j, 1]
            m2 += klj * alpha[j, 2] + wm * mu[j, 2]
            wd = -c2 * klj * a - c4 * klj * p * b
            wb = c2 * klj * p
            g0 += wd * d0 + wb * e0
            g1 += wd * d1 + wb * e1
            g2 += wd * d2 + wb * e2
        gmu[l, 0] = m0
        gmu[l, 1] = m1
        gmu[l, 2] = m2
        gq[l, 0] = g0
        gq[l, 1] = g1
        gq[l, 2] = g2


@nb.njit(parallel=True, cache=True)
def kernel_apply(x, y, w, inv_s2, out):
    """``out[a] = sum_b exp(-|x_a - y_b|^2 inv_s2) w[b]``."""
    for a in nb.prange(x.shape[0]):
        s0 = s1 = s2 = 0.0
        for b in range(y.shape[0]):
            d0 = x[a, 0] - y[b, 0]
            d1 = x[a, 1] - y[b, 1]
            d2 = x[a, 2] - y[b, 2]
            k = np.exp(-(d0 * d0 + d1 * d1 + d2 * d2) * inv_s2)
            s0 += k * w[b, 0]
            s1 += k * w[b, 1]
            s2 += k * w[b, 2]
        out[a, 0] = s0
        out[a, 1] = s1
        out[a, 2] = s2


@nb.njit(parallel=True, cache=True)
def kernel_rowsums(x, y, inv_s2, rows, grad):
    """Row sums of the Gaussian kernel matrix and ``sum_b k_ab (x_a - y_b)``."""
    for a in nb.prange(x.shape[0]):
        s = 0.0
        g0 = g1 = g2 = 0.0
        for b in range(y.shape[0]):
            d0 = x[a, 0] - y[b, 0]
            d1 = x[a, 1] - y[b, 1]
            d2 = x[a, 2] - y[b, 2]
            k = np.exp(-(d0 * d0 + d1 * d1 + d2 * d2) * inv_s2)
            s += k
            g0 += k * d0
            g1 += k * d1
            g2 += k * d2
        rows[a] = s
        grad[a, 0] = g0
        grad[a, 1] = g1
        grad[a, 2] = g2
