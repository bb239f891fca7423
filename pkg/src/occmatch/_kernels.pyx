# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: rectangular assignment and ray casting.

Must stay numerically interchangeable with ``_kernels_py``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, fabs, INFINITY, M_PI

cnp.import_array()


def lap_solve(double[:, ::1] cost):
    """Min-cost assignment of every row to a distinct column (rows <= cols).

    Shortest augmenting path with row/column potentials, O(rows^2 * cols).
    Returns the column index chosen for each row.
    """
    cdef Py_ssize_t n = cost.shape[0], m = cost.shape[1]
    if n > m:
        raise ValueError("lap_solve needs rows <= cols")
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(m + 1)
    cdef double[::1] minv = np.empty(m + 1)
    cdef cnp.int64_t[::1] p = np.zeros(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] way = np.zeros(m + 1, dtype=np.int64)
    cdef unsigned char[::1] used = np.zeros(m + 1, dtype=np.uint8)
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] ov = out
    for j in range(1, m + 1):
        if p[j] != 0:
            ov[p[j] - 1] = j - 1
    return out


def ray_hits(double ox, double oy, Py_ssize_t n_rays, double[:, ::1] edges):
    """Distance to the first edge hit by each of ``n_rays`` uniform rays.

    ``edges`` is (E, 4) rows of (ax, ay, bx, by). Rays that hit nothing get inf.
    """
    out = np.full(n_rays, np.inf)
    cdef double[::1] hits = out
    cdef Py_ssize_t k, e, n_edges = edges.shape[0]
    cdef double ang, dx, dy, ax, ay, ex, ey, wx, wy, denom, t, uu, ta, tb, lo, hi, best
    cdef double eps = 1e-12
    for k in range(n_rays):
        ang = 2.0 * M_PI * k / n_rays
        dx = cos(ang)
        dy = sin(ang)
        best = INFINITY
        for e in range(n_edges):
            ax = edges[e, 0]
            ay = edges[e, 1]
            ex = edges[e, 2] - ax
            ey = edges[e, 3] - ay
            wx = ax - ox
            wy = ay - oy
            denom = dx * ey - dy * ex
            if fabs(denom) <= eps:
                if fabs(wx * dy - wy * dx) > eps:
                    continue
                ta = wx * dx + wy * dy
                tb = (edges[e, 2] - ox) * dx + (edges[e, 3] - oy) * dy
                lo = ta if ta < tb else tb
                hi = tb if ta < tb else ta
                if hi < 0.0:
                    continue
                t = lo if lo > 0.0 else 0.0
            else:
                t = (wx * ey - wy * ex) / denom
                uu = (wx * dy - wy * dx) / denom
                if t < 0.0 or uu < -eps or uu > 1.0 + eps:
                    continue
            if t < best:
                best = t
        hits[k] = best
    return out


def window_reaches(double[::1] hits, cnp.int64_t[::1] k_lo, cnp.int64_t[::1] k_hi,
                   double[::1] dist, double tol):
    """For each query, whether any ray in [k_lo, k_hi] (mod n) reaches ``dist``."""
    cdef Py_ssize_t q, k, n = hits.shape[0], nq = dist.shape[0]
    out = np.zeros(nq, dtype=bool)
    cdef cnp.npy_bool[::1] ov = out
    cdef Py_ssize_t idx
    for q in range(nq):
        for k in range(k_lo[q], k_hi[q] + 1):
            idx = k % n
            if idx < 0:
                idx += n
            if hits[idx] >= dist[q] - tol:
                ov[q] = 1
                break
    return out
