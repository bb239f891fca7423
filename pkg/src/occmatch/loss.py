"""Training losses: matched class/position/trajectory loss and the
exact-cell weighted cross-entropy baseline, with analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assign import NO_OBJECT, Assignment, softmax
from .geom import HeadingVec, heading_cosine_gap, normalize_backward, normalize_heading, rotate_many, safe_normalize
from .scene import GRID_RES, AgentClass

DEFAULT_WEIGHTS = (1.0, 1.0, 1.0)
DEFAULT_POSITIVE_WEIGHT = 50.0


@dataclass
class PredictionSet:
    anchors: np.ndarray  # (K, 2)
    class_logits: np.ndarray  # (K, 4): car, pedestrian, bicycle, no-class
    delta: np.ndarray  # (K, 2)
    heading_raw: np.ndarray  # (K, 2) raw (cos, sin)
    mode_logits: np.ndarray  # (K, M)
    modes: np.ndarray  # (K, M, T, 2) per-step displacements, agent frame

    def __len__(self) -> int:
        return len(self.anchors)

    def positions(self) -> np.ndarray:
        return self.anchors + self.delta

    def class_probs(self) -> np.ndarray:
        return softmax(self.class_logits)

    def occupancy(self) -> np.ndarray:
        """P(any agent class) = 1 - P(no class)."""
        return 1.0 - self.class_probs()[:, AgentClass.NO_CLASS]

    def headings(self) -> np.ndarray:
        return safe_normalize(self.heading_raw)[0]

    def global_modes(self) -> np.ndarray:
        """(K, M, T, 2) absolute future positions of every mode."""
        return modes_to_global(self.modes, self.headings(), self.positions())

    def subset(self, idx) -> "PredictionSet":
        return PredictionSet(
            self.anchors[idx], self.class_logits[idx], self.delta[idx],
            self.heading_raw[idx], self.mode_logits[idx], self.modes[idx],
        )


@dataclass
class LossBreakdown:
    class_loss: float
    pos_loss: float
    traj_loss: float
    total: float
    per_anchor_class: np.ndarray
    per_anchor_pos: np.ndarray
    per_anchor_traj: np.ndarray
    best_mode: dict = field(default_factory=dict)  # anchor index -> m*


@dataclass
class LossGradients:
    class_logits: np.ndarray
    delta: np.ndarray
    heading_raw: np.ndarray
    mode_logits: np.ndarray
    modes: np.ndarray


def modes_to_global(modes: np.ndarray, heading: np.ndarray, start: np.ndarray) -> np.ndarray:
    """Rotate local per-step displacements by heading and accumulate from ``start``.

    ``modes`` is (..., M, T, 2); ``heading`` and ``start`` are (..., 2).
    """
    steps = np.cumsum(modes, axis=-2)
    c = heading[..., 0][..., None, None]
    s = heading[..., 1][..., None, None]
    return start[..., None, None, :] + rotate_many(steps, c, s)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# --- per-term operations -------------------------------------------------


def class_loss(pred_logits, target) -> float:
    """Softmax cross-entropy against a one-hot class target."""
    return float(-_log_softmax(np.asarray(pred_logits, dtype=np.float64))[int(target)])


def positional_loss(anchor, delta, heading_raw, gt_pos, gt_heading) -> float:
    """Mean squared position error plus heading cosine gap."""
    p = np.asarray(anchor, dtype=np.float64) + np.asarray(delta, dtype=np.float64)
    mse = float(np.mean((p - np.asarray(gt_pos, dtype=np.float64)) ** 2))
    u = normalize_heading(*heading_raw)
    return mse + heading_cosine_gap(u, HeadingVec(*gt_heading))


def trajectory_loss(modes, mode_logits, heading, anchor_plus_delta, gt_future):
    """Winner-takes-all trajectory loss; returns (loss, best mode index)."""
    modes = np.asarray(modes, dtype=np.float64)
    gt_future = np.asarray(gt_future, dtype=np.float64)
    if gt_future.shape != modes.shape[1:]:
        raise ValueError(f"gt_future shape {gt_future.shape} does not match modes {modes.shape[1:]}")
    glob = modes_to_global(modes, np.asarray(heading, dtype=np.float64), np.asarray(anchor_plus_delta, dtype=np.float64))
    per_mode = np.mean((glob - gt_future) ** 2, axis=(-1, -2))
    m_star = int(np.argmin(per_mode))
    ce = float(-_log_softmax(np.asarray(mode_logits, dtype=np.float64))[m_star])
    return ce + float(per_mode[m_star]), m_star


# --- batched loss with gradients -----------------------------------------


def _class_targets(n: int, sigma, gt_cls) -> np.ndarray:
    targets = np.full(n, int(AgentClass.NO_CLASS), dtype=np.int64)
    matched = sigma != NO_OBJECT
    targets[matched] = gt_cls[sigma[matched]]
    return targets


def _weighted_bce(logits, occupied, positive_weight):
    """Occupied/free cross-entropy on 1 - P(no class), with its logit gradient."""
    ls = _log_softmax(logits)
    log_free = ls[:, AgentClass.NO_CLASS]
    agent_logits = logits[:, : AgentClass.NO_CLASS]
    m = agent_logits.max(axis=1, keepdims=True)
    log_occ = (m[:, 0] + np.log(np.exp(agent_logits - m).sum(axis=1))) - (
        logits.max(axis=1) + np.log(np.exp(logits - logits.max(axis=1, keepdims=True)).sum(axis=1))
    )
    w = np.where(occupied, positive_weight, 1.0)
    per = np.where(occupied, -w * log_occ, -log_free)
    p = np.exp(ls)
    grad = p.copy()
    grad[~occupied, AgentClass.NO_CLASS] -= 1.0
    r = softmax(agent_logits[occupied])
    grad[occupied, : AgentClass.NO_CLASS] -= r
    grad *= w[:, None]
    return per, grad


def _matched_terms(preds: PredictionSet, rows, gt_idx, gt_pos, gt_head, gt_fut, modes_rows, need_grad):
    """Positional and trajectory terms for matched rows.

    ``modes_rows`` holds the mode tensors of exactly those rows, so callers
    may skip computing trajectories for unmatched anchors.
    """
    k = len(rows)
    raw = preds.heading_raw[rows]
    u, _ = safe_normalize(raw)
    p_hat = preds.anchors[rows] + preds.delta[rows]
    gp = gt_pos[gt_idx]
    gh = gt_head[gt_idx]
    pos_err = p_hat - gp
    pos_terms = np.mean(pos_err**2, axis=1) + (1.0 - np.sum(u * gh, axis=1))

    traj_terms = np.zeros(k)
    m_star = np.zeros(k, dtype=np.int64)
    grads = None
    if modes_rows is not None and k:
        T = modes_rows.shape[2]
        steps = np.cumsum(modes_rows, axis=2)  # (k, M, T, 2)
        glob = p_hat[:, None, None, :] + rotate_many(steps, u[:, 0, None, None], u[:, 1, None, None])
        err = glob - gt_fut[gt_idx][:, None]  # (k, M, T, 2)
        per_mode = np.mean(err**2, axis=(2, 3))
        m_star = np.argmin(per_mode, axis=1)
        ls = _log_softmax(preds.mode_logits[rows])
        traj_terms = -ls[np.arange(k), m_star] + per_mode[np.arange(k), m_star]
        if need_grad:
            e = err[np.arange(k), m_star] / T  # dL/dX_t, (k, T, 2)
            g_start = e.sum(axis=1)
            tail = np.cumsum(e[:, ::-1], axis=1)[:, ::-1]  # sum_{t >= tau} e_t
            c, s = u[:, 0, None], u[:, 1, None]
            g_step = np.stack([c * tail[..., 0] + s * tail[..., 1], -s * tail[..., 0] + c * tail[..., 1]], axis=-1)
            g_modes = np.zeros_like(modes_rows)
            g_modes[np.arange(k), m_star] = g_step
            v = steps[np.arange(k), m_star]
            g_u = np.stack(
                [np.sum(e[..., 0] * v[..., 0] + e[..., 1] * v[..., 1], axis=1),
                 np.sum(-e[..., 0] * v[..., 1] + e[..., 1] * v[..., 0], axis=1)],
                axis=1,
            )
            g_mlog = np.exp(ls)
            g_mlog[np.arange(k), m_star] -= 1.0
            grads = (g_start, g_u, g_mlog, g_modes)
    pos_grads = None
    if need_grad:
        pos_grads = (pos_err, -gh)  # d/d p_hat (mean over 2 coords), d/du
    return pos_terms, traj_terms, m_star, pos_grads, grads, raw


def _gt_arrays(gts):
    n = len(gts)
    gt_pos = np.array([g.pos for g in gts], dtype=np.float64).reshape(n, 2)
    gt_head = np.array([g.heading for g in gts], dtype=np.float64).reshape(n, 2)
    gt_cls = np.array([int(g.cls) for g in gts], dtype=np.int64)
    T = gts[0].future.shape[0] if n else 0
    gt_fut = np.array([g.future for g in gts], dtype=np.float64).reshape(n, T, 2)
    return gt_pos, gt_head, gt_cls, gt_fut


def loss_and_gradients(
    preds: PredictionSet,
    gts,
    sigma,
    weights=DEFAULT_WEIGHTS,
    need_grad: bool = True,
    regime: str = "hungarian",
    positive_weight: float = DEFAULT_POSITIVE_WEIGHT,
    modes_rows=None,
):
    """Full training loss and (optionally) its gradients.

    ``regime="hungarian"`` uses multi-class cross-entropy with targets from
    ``sigma``; ``regime="exact_ce"`` replaces the class term by the
    positive-weighted occupied/free cross-entropy with occupancy given by
    ``sigma`` (anchors matched to an agent are occupied). ``modes_rows``, if
    given, holds the mode tensors of matched anchors in ascending anchor
    order and is used instead of ``preds.modes``.
    """
    if isinstance(sigma, Assignment):
        sigma = sigma.sigma
    sigma = np.asarray(sigma, dtype=np.int64)
    w1, w2, w3 = weights
    K = len(preds)
    gt_pos, gt_head, gt_cls, gt_fut = _gt_arrays(gts)
    rows = np.nonzero(sigma != NO_OBJECT)[0]
    gt_idx = sigma[rows]

    if regime == "hungarian":
        targets = _class_targets(K, sigma, gt_cls)
        ls = _log_softmax(preds.class_logits)
        per_class = -ls[np.arange(K), targets]
        g_cls = np.exp(ls)
        g_cls[np.arange(K), targets] -= 1.0
    elif regime == "exact_ce":
        per_class, g_cls = _weighted_bce(preds.class_logits, sigma != NO_OBJECT, positive_weight)
    else:
        raise ValueError(f"unknown regime {regime!r}")

    use_traj = w3 != 0.0
    if modes_rows is None and use_traj:
        modes_rows = preds.modes[rows]
    pos_t, traj_t, m_star, pos_g, traj_g, raw = _matched_terms(
        preds, rows, gt_idx, gt_pos, gt_head, gt_fut, modes_rows if use_traj else None, need_grad
    )
    per_pos = np.zeros(K)
    per_traj = np.zeros(K)
    per_pos[rows] = pos_t
    per_traj[rows] = traj_t
    c_sum, p_sum, t_sum = float(per_class.sum()), float(per_pos.sum()), float(per_traj.sum())
    total = w1 * c_sum + w2 * p_sum + w3 * t_sum
    breakdown = LossBreakdown(
        c_sum, p_sum, t_sum, total, per_class, per_pos, per_traj,
        {int(r): int(m) for r, m in zip(rows, m_star)} if use_traj else {},
    )
    if not need_grad:
        return breakdown, None

    M = preds.mode_logits.shape[1]
    g_delta = np.zeros((K, 2))
    g_u = np.zeros((len(rows), 2))
    g_mlog = np.zeros((K, M))
    g_delta[rows] += w2 * pos_g[0]
    g_u += w2 * pos_g[1]
    g_modes_rows = None
    if use_traj and traj_g is not None:
        g_start, gu_t, gml, g_modes_rows = traj_g
        g_delta[rows] += w3 * g_start
        g_u += w3 * gu_t
        g_mlog[rows] = w3 * gml
        g_modes_rows = w3 * g_modes_rows
    g_head = np.zeros((K, 2))
    if len(rows):
        g_head[rows] = normalize_backward(raw, g_u)
    grads = LossGradients(w1 * g_cls, g_delta, g_head, g_mlog, g_modes_rows)
    return breakdown, grads


def total_loss(preds: PredictionSet, gts, sigma, weights=DEFAULT_WEIGHTS) -> LossBreakdown:
    return loss_and_gradients(preds, gts, sigma, weights, need_grad=False)[0]


def total_loss_gradients(preds: PredictionSet, gts, sigma, weights=DEFAULT_WEIGHTS) -> LossGradients:
    """Analytic gradients of ``total_loss`` w.r.t. every prediction field."""
    if isinstance(sigma, Assignment):
        sigma = sigma.sigma
    sigma = np.asarray(sigma, dtype=np.int64)
    _, g = loss_and_gradients(preds, gts, sigma, weights, need_grad=True)
    full = np.zeros_like(preds.modes)
    if g.modes is not None:
        full[np.nonzero(sigma != NO_OBJECT)[0]] = g.modes
    g.modes = full
    return g


# --- exact-cell baseline -------------------------------------------------


def exact_cell_sigma(anchors: np.ndarray, gt_pos: np.ndarray, cell: float = GRID_RES) -> np.ndarray:
    """Anchor -> agent map where an anchor is occupied iff an agent lies in its cell.

    The cell is the ``cell``-wide square centered on the anchor, half-open on
    the upper sides. When several agents share a cell the nearest is used.
    """
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 2)
    gt_pos = np.asarray(gt_pos, dtype=np.float64).reshape(-1, 2)
    sigma = np.full(len(anchors), NO_OBJECT, dtype=np.int64)
    if len(gt_pos) == 0 or len(anchors) == 0:
        return sigma
    h = cell / 2
    rel = gt_pos[None, :, :] - anchors[:, None, :]
    inside = np.all((rel >= -h) & (rel < h), axis=-1)
    d = np.where(inside, np.linalg.norm(rel, axis=-1), np.inf)
    hit = inside.any(axis=1)
    sigma[hit] = np.argmin(d[hit], axis=1)
    return sigma


def exact_match_weighted_ce(preds: PredictionSet, gts, positive_weight: float = DEFAULT_POSITIVE_WEIGHT, cell: float = GRID_RES) -> float:
    """Summed occupied/free cross-entropy with exact-cell occupancy targets."""
    if not positive_weight > 0:
        raise ValueError("positive_weight must be > 0")
    gt_pos = np.array([g.pos for g in gts], dtype=np.float64).reshape(-1, 2)
    occupied = exact_cell_sigma(preds.anchors, gt_pos, cell) != NO_OBJECT
    per, _ = _weighted_bce(np.asarray(preds.class_logits, dtype=np.float64), occupied, positive_weight)
    return float(per.sum())


def weighted_ce_with_targets(preds: PredictionSet, occupied, positive_weight: float = DEFAULT_POSITIVE_WEIGHT) -> np.ndarray:
    """Per-anchor occupied/free weighted cross-entropy for given targets."""
    per, _ = _weighted_bce(np.asarray(preds.class_logits, dtype=np.float64), np.asarray(occupied, dtype=bool), positive_weight)
    return per


# --- three-scenario case study -------------------------------------------

_POSITIVE = np.log([0.97, 0.01, 0.01, 0.01])
_NEGATIVE = np.log([0.01, 0.01, 0.01, 0.97])


def _case_predictions(positive_cells, half: int = 2, cell: float = GRID_RES, T: int = 40):
    from .scene import GroundTruth

    ij = [(i, j) for j in range(-half, half + 1) for i in range(-half, half + 1)]
    anchors = np.array([(i * cell, j * cell) for i, j in ij], dtype=np.float64)
    K = len(anchors)
    logits = np.tile(_NEGATIVE, (K, 1))
    for i, j in positive_cells:
        logits[ij.index((i, j))] = _POSITIVE
    speed = 5.0
    step = np.array([speed * 0.1, 0.0])
    future = np.cumsum(np.tile(step, (T, 1)), axis=0)
    preds = PredictionSet(
        anchors=anchors,
        class_logits=logits,
        delta=np.zeros((K, 2)),
        heading_raw=np.tile([1.0, 0.0], (K, 1)),
        mode_logits=np.zeros((K, 1)),
        modes=np.tile(step, (K, 1, T, 1)),
    )
    gt = GroundTruth(0, AgentClass.CAR, np.zeros(2), np.array([1.0, 0.0]), True, future)
    return preds, [gt], ij


def loss_case_study(lambda_pos: float = 1.0, lambda_class: float = 3.0, positive_weight: float = DEFAULT_POSITIVE_WEIGHT) -> dict:
    """Exact, offset and redundant predictions around one car.

    Each case is scored by the positive-weighted occupied/free cross-entropy
    twice: with occupancy targets taken from the exact cell, and with the
    target taken from the optimal assignment (plus that anchor's positional
    cost). The per-anchor terms of the full matched loss are reported too.
    """
    from .assign import match_predictions

    cases = {
        "a_exact": [(0, 0)],
        "b_offset": [(1, 0)],
        "c_redundant": [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)],
    }
    rows = []
    for name, positives in cases.items():
        preds, gts, ij = _case_predictions(positives)
        occ_exact = exact_cell_sigma(preds.anchors, [g.pos for g in gts]) != NO_OBJECT
        without = float(weighted_ce_with_targets(preds, occ_exact, positive_weight).sum())
        assignment = match_predictions(preds, gts, lambda_pos, lambda_class)
        occ_matched = assignment.sigma != NO_OBJECT
        n_star = assignment.prediction_for(0)
        pos_term = float(np.mean((preds.positions()[n_star] - gts[0].pos) ** 2))
        class_with = float(weighted_ce_with_targets(preds, occ_matched, positive_weight).sum())
        full = total_loss(preds, gts, assignment)
        redundant = {
            str(ij[n]): float(full.per_anchor_class[n])
            for n in range(len(preds))
            if ij[n] in positives and n != n_star
        }
        rows.append(
            {
                "case": name,
                "matched_anchor": list(ij[n_star]),
                "without_matching_loss": without,
                "with_matching_class_loss": class_with,
                "positional_term": pos_term,
                "with_matching_loss": class_with + pos_term,
                "matched_total_loss": full.total,
                "redundant_anchor_class_loss": redundant,
            }
        )
    by = {r["case"]: r for r in rows}
    a, b, c = by["a_exact"], by["b_offset"], by["c_redundant"]
    checks = {
        "a_equal_across_regimes": abs(a["with_matching_loss"] - a["without_matching_loss"]) <= 1e-9,
        "c_equal_across_regimes": abs(c["with_matching_loss"] - c["without_matching_loss"]) <= 1e-9,
        "b_without_exceeds_with": b["without_matching_loss"] > b["with_matching_loss"],
        "b_without_exceeds_a_without": b["without_matching_loss"] > a["without_matching_loss"],
        "b_with_is_a_plus_position": abs(
            b["with_matching_loss"] - (a["with_matching_loss"] + b["positional_term"])
        ) <= 1e-9,
    }
    report = {"lambda_pos": lambda_pos, "lambda_class": lambda_class, "positive_weight": positive_weight, "cases": rows, "checks": checks}
    failed = [k for k, ok in checks.items() if not ok]
    if failed:
        raise AssertionError(f"case-study ordering violated: {failed}")
    return report
