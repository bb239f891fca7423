"""Independent reference implementations used as test oracles.

These are deliberately naive (enumeration, dense sampling, loops) and share
no code with the package beyond plain data types.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def brute_force_assignment(cost):
    """Minimum total cost over all injective maps rows -> columns."""
    cost = np.asarray(cost, dtype=float)
    g, n = cost.shape
    if g == 0:
        return 0.0, ()
    best, best_cols = math.inf, None
    for cols in itertools.permutations(range(n), g):
        total = sum(cost[r, c] for r, c in enumerate(cols))
        if total < best:
            best, best_cols = total, cols
    return best, best_cols


def assignment_cost(cost, cols):
    return float(sum(cost[r, c] for r, c in enumerate(cols)))


def sampled_ray_hit(origin, direction, a, b, samples=10_000, tol=None):
    """Smallest t at which some sampled segment point lies on the ray."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    s = np.linspace(0.0, 1.0, samples)[:, None]
    pts = a + s * (b - a)
    rel = pts - np.asarray(origin, float)
    d = np.asarray(direction, float)
    along = rel @ d
    perp = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0])
    if tol is None:
        tol = 2.0 * np.linalg.norm(b - a) / samples
    ok = (along >= -tol) & (perp <= tol)
    if not ok.any():
        return None
    return float(max(along[ok].min(), 0.0))


def segments_cross(p, q, a, b):
    """Closed segment test for p->q against a->b (non-parallel)."""
    d = (q[0] - p[0], q[1] - p[1])
    e = (b[0] - a[0], b[1] - a[1])
    w = (a[0] - p[0], a[1] - p[1])
    den = d[0] * e[1] - d[1] * e[0]
    if abs(den) < 1e-15:
        return False
    t = (w[0] * e[1] - w[1] * e[0]) / den
    u = (w[0] * d[1] - w[1] * d[0]) / den
    return 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0


def cell_visible_exact(origin, center, edges):
    """A point is visible iff the straight line to it crosses no edge."""
    return not any(segments_cross(origin, center, e[:2], e[2:]) for e in edges)


def global_modes(modes, heading_angle, start):
    """Per mode: cumulative sum of rotated displacements, offset by start."""
    c, s = math.cos(heading_angle), math.sin(heading_angle)
    out = np.zeros_like(np.asarray(modes, float))
    for m in range(out.shape[0]):
        x, y = start
        for t in range(out.shape[1]):
            dx, dy = modes[m][t]
            x += c * dx - s * dy
            y += s * dx + c * dy
            out[m, t] = (x, y)
    return out


def mcc_formula(tp, fp, fn, tn):
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    return 0.0 if den == 0 else (tp * tn - fp * fn) / math.sqrt(den)


def threshold_confusion_bruteforce(pred, gt, total, d):
    """Maximize the number of within-d pairs over optimal-distance matchings.

    The package pairs points by minimum total distance, then thresholds; the
    oracle enumerates every injective map, keeps the minimum-total ones and
    counts pairs within ``d``.
    """
    pred = np.asarray(pred, float).reshape(-1, 2)
    gt = np.asarray(gt, float).reshape(-1, 2)
    if len(pred) == 0 or len(gt) == 0:
        tp = 0
    else:
        dist = np.linalg.norm(pred[:, None] - gt[None], axis=-1)
        small = dist if len(pred) <= len(gt) else dist.T
        _, cols = brute_force_assignment(small)
        tp = sum(1 for r, c in enumerate(cols) if small[r, c] <= d)
    fp = len(pred) - tp
    fn = len(gt) - tp
    return tp, fp, fn, total - tp - fp - fn


def central_difference(f, x, h=1e-5):
    """Gradient of scalar f at array x by central differences."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def eq7_total_batched(fields, gt_pos, gt_head, gt_cls, gt_fut, sigma, weights=(1.0, 1.0, 1.0)):
    """Total matched loss for a batch of prediction sets (leading axis B).

    ``fields`` maps class_logits (B,K,4), delta (B,K,2), heading_raw (B,K,2),
    mode_logits (B,K,M), modes (B,K,M,T,2) and anchors (K,2). Written from the
    loss definition alone: class CE for every anchor (no-class target when
    unmatched); for matched anchors mean squared position error plus cosine
    gap, and winner-takes-all trajectory loss.
    """
    w1, w2, w3 = weights
    logits = fields["class_logits"]
    B, K, _ = logits.shape
    targets = np.full(K, 3)
    rows = np.nonzero(sigma >= 0)[0]
    targets[rows] = gt_cls[sigma[rows]]
    z = logits - logits.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    cls = -logp[:, np.arange(K), targets].sum(axis=1)
    if len(rows) == 0:
        return w1 * cls
    g = sigma[rows]
    p = fields["anchors"][rows][None] + fields["delta"][:, rows]
    raw = fields["heading_raw"][:, rows]
    u = raw / np.linalg.norm(raw, axis=-1, keepdims=True)
    pos = (np.mean((p - gt_pos[g][None]) ** 2, axis=-1) + 1.0 - np.sum(u * gt_head[g][None], axis=-1)).sum(axis=1)
    modes = fields["modes"][:, rows]  # (B, R, M, T, 2)
    cum = np.cumsum(modes, axis=3)
    c = u[..., 0][:, :, None, None]
    s = u[..., 1][:, :, None, None]
    gx = p[..., 0][:, :, None, None] + c * cum[..., 0] - s * cum[..., 1]
    gy = p[..., 1][:, :, None, None] + s * cum[..., 0] + c * cum[..., 1]
    fut = gt_fut[g][None, :, None]  # (1, R, 1, T, 2)
    mse = ((gx - fut[..., 0]) ** 2 + (gy - fut[..., 1]) ** 2).mean(axis=-1) / 2.0  # (B, R, M)
    best = mse.argmin(axis=-1)
    ml = fields["mode_logits"][:, rows]
    zm = ml - ml.max(axis=-1, keepdims=True)
    logpm = zm - np.log(np.exp(zm).sum(axis=-1, keepdims=True))
    pick = np.take_along_axis
    traj = (-pick(logpm, best[..., None], -1)[..., 0] + pick(mse, best[..., None], -1)[..., 0]).sum(axis=1)
    return w1 * cls + w2 * pos + w3 * traj


def batched_central_difference(base, evaluate, names, h=1e-5):
    """Central-difference gradients of every entry of ``base[name]``.

    ``evaluate`` maps a dict of batched fields to a (B,) array of losses.
    """
    grads = {}
    for name in names:
        x = base[name]
        P = x.size
        batch = {k: np.broadcast_to(v, (2 * P,) + v.shape).copy() for k, v in base.items() if k != "anchors"}
        batch["anchors"] = base["anchors"]
        flat = batch[name].reshape(2 * P, -1)
        idx = np.arange(P)
        flat[idx, idx] += h
        flat[P + idx, idx] -= h
        vals = evaluate(batch)
        grads[name] = ((vals[:P] - vals[P:]) / (2 * h)).reshape(x.shape)
    return grads
