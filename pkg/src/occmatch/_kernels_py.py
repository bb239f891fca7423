"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def lap_solve(cost):
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n, m = cost.shape
    if n > m:
        raise ValueError("lap_solve needs rows <= cols")
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    out = np.empty(n, dtype=np.int64)
    cols = np.nonzero(p[1:])[0]
    out[p[1:][cols] - 1] = cols
    return out


def ray_hits(ox, oy, n_rays, edges):
    edges = np.asarray(edges, dtype=np.float64).reshape(-1, 4)
    out = np.full(n_rays, np.inf)
    if len(edges) == 0:
        return out
    eps = 1e-12
    ang = 2.0 * np.pi * np.arange(n_rays) / n_rays
    dx = np.cos(ang)[:, None]
    dy = np.sin(ang)[:, None]
    ax, ay = edges[:, 0], edges[:, 1]
    ex, ey = edges[:, 2] - ax, edges[:, 3] - ay
    wx, wy = ax - ox, ay - oy
    denom = dx * ey - dy * ex
    par = np.abs(denom) <= eps
    safe = np.where(par, 1.0, denom)
    t = (wx * ey - wy * ex) / safe
    uu = (wx * dy - wy * dx) / safe
    ok = ~par & (t >= 0.0) & (uu >= -eps) & (uu <= 1.0 + eps)
    # colinear overlap: nearest point of the overlap along the ray
    ta = wx * dx + wy * dy
    tb = (edges[:, 2] - ox) * dx + (edges[:, 3] - oy) * dy
    on_line = par & (np.abs(wx * dy - wy * dx) <= eps) & (np.maximum(ta, tb) >= 0.0)
    t_col = np.maximum(np.minimum(ta, tb), 0.0)
    t_all = np.where(ok, t, np.where(on_line, t_col, np.inf))
    return t_all.min(axis=1)


def window_reaches(hits, k_lo, k_hi, dist, tol):
    hits = np.asarray(hits, dtype=np.float64)
    k_lo = np.asarray(k_lo, dtype=np.int64)
    k_hi = np.asarray(k_hi, dtype=np.int64)
    dist = np.asarray(dist, dtype=np.float64)
    n = len(hits)
    out = np.zeros(len(dist), dtype=bool)
    if len(dist) == 0:
        return out
    width = int((k_hi - k_lo).max()) + 1
    for off in range(width):
        k = k_lo + off
        active = k <= k_hi
        out |= active & (hits[k % n] >= dist - tol)
    return out
