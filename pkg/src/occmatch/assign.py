"""Matching cost and optimal one-to-one assignment of predictions to agents."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ParseError, ShapeMismatch

NO_OBJECT = -1
DEFAULT_LAMBDA_POS = 1.0
DEFAULT_LAMBDA_CLASS = 3.0


DimensionMismatch = ShapeMismatch


@dataclass
class CostMatrix:
    """Rows are ground-truth agents, columns are predictions."""

    entries: np.ndarray  # (|G|, |N|)
    lambda_pos: float = DEFAULT_LAMBDA_POS
    lambda_class: float = DEFAULT_LAMBDA_CLASS

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2:
            raise DimensionMismatch("cost matrix must be 2-D")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("cost matrix entries must be finite")
        if self.entries.shape[0] > self.entries.shape[1]:
            raise DimensionMismatch(
                f"more ground truths ({self.entries.shape[0]}) than predictions ({self.entries.shape[1]})"
            )


@dataclass
class Assignment:
    sigma: np.ndarray  # (|N|,) gt index per prediction, NO_OBJECT if unmatched
    total_cost: float

    def pairs(self) -> list:
        """(prediction, gt) pairs ordered by gt index."""
        preds = np.nonzero(self.sigma != NO_OBJECT)[0]
        return sorted(((int(n), int(self.sigma[n])) for n in preds), key=lambda p: p[1])

    def prediction_for(self, g: int) -> int:
        return int(np.nonzero(self.sigma == g)[0][0])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def build_cost_matrix(
    pred_pos: np.ndarray,
    class_probs: np.ndarray,
    gt_pos: np.ndarray,
    gt_cls: np.ndarray,
    lambda_pos: float = DEFAULT_LAMBDA_POS,
    lambda_class: float = DEFAULT_LAMBDA_CLASS,
) -> CostMatrix:
    """C[g, n] = lambda_pos * |p_n - p_g| - lambda_class * P_n(class of g).

    ``pred_pos`` are the shifted anchor positions (anchor + predicted offset).
    """
    if lambda_pos < 0 or lambda_class < 0:
        raise ValueError("matching weights must be non-negative")
    pred_pos = np.asarray(pred_pos, dtype=np.float64).reshape(-1, 2)
    class_probs = np.asarray(class_probs, dtype=np.float64)
    gt_pos = np.asarray(gt_pos, dtype=np.float64).reshape(-1, 2)
    gt_cls = np.asarray(gt_cls, dtype=np.int64).reshape(-1)
    if class_probs.shape[0] != pred_pos.shape[0] or len(gt_cls) != len(gt_pos):
        raise DimensionMismatch("prediction or ground-truth arrays disagree in length")
    if class_probs.ndim != 2 or gt_cls.size and gt_cls.max() >= class_probs.shape[1]:
        raise DimensionMismatch("class probabilities do not cover the ground-truth classes")
    if class_probs.size and np.max(np.abs(class_probs.sum(axis=1) - 1.0)) > 1e-6:
        raise ValueError("class probabilities must sum to 1")
    dist = np.linalg.norm(gt_pos[:, None, :] - pred_pos[None, :, :], axis=-1)
    cls_term = class_probs[:, gt_cls].T
    return CostMatrix(lambda_pos * dist - lambda_class * cls_term, lambda_pos, lambda_class)


def hungarian_solve(cost) -> Assignment:
    """Globally optimal assignment of every gt row to a distinct prediction.

    Predictions left over map to NO_OBJECT at zero cost. With no ground
    truth the result is all NO_OBJECT with cost 0.
    """
    if not isinstance(cost, CostMatrix):
        cost = CostMatrix(cost)
    c = np.ascontiguousarray(cost.entries)
    n_gt, n_pred = c.shape
    sigma = np.full(n_pred, NO_OBJECT, dtype=np.int64)
    if n_gt == 0:
        return Assignment(sigma, 0.0)
    cols = kernels.lap_solve(c)
    sigma[cols] = np.arange(n_gt)
    return Assignment(sigma, float(c[np.arange(n_gt), cols].sum()))


def match(pred_pos, class_probs, gt_pos, gt_cls, lambda_pos=DEFAULT_LAMBDA_POS, lambda_class=DEFAULT_LAMBDA_CLASS) -> Assignment:
    return hungarian_solve(build_cost_matrix(pred_pos, class_probs, gt_pos, gt_cls, lambda_pos, lambda_class))


def match_predictions(preds, gts, lambda_pos=DEFAULT_LAMBDA_POS, lambda_class=DEFAULT_LAMBDA_CLASS) -> Assignment:
    """Match a ``PredictionSet`` against a list of ``GroundTruth``."""
    gt_pos = np.array([g.pos for g in gts]).reshape(-1, 2)
    gt_cls = np.array([int(g.cls) for g in gts], dtype=np.int64)
    return match(preds.positions(), softmax(preds.class_logits), gt_pos, gt_cls, lambda_pos, lambda_class)


def distance_assignment(a: np.ndarray, b: np.ndarray) -> list:
    """Optimal pure-distance one-to-one pairing of two point sets.

    Returns (i, j, distance) triples; min(len(a), len(b)) pairs.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        return []
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    if len(a) <= len(b):
        cols = kernels.lap_solve(np.ascontiguousarray(d))
        return [(i, int(j), float(d[i, j])) for i, j in enumerate(cols)]
    rows = kernels.lap_solve(np.ascontiguousarray(d.T))
    return sorted((int(i), j, float(d[i, j])) for j, i in enumerate(rows))


def load_cost_csv(path) -> np.ndarray:
    """Parse a comma-separated numeric matrix, naming the bad cell on error."""
    rows = []
    with open(path) as fh:
        for r, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            row = []
            for c, cell in enumerate(line.split(",")):
                try:
                    row.append(float(cell))
                except ValueError:
                    raise ParseError(f"row {r} column {c}: not a number: {cell.strip()!r}") from None
            rows.append(row)
    if not rows or len({len(r) for r in rows}) != 1:
        raise ParseError("cost matrix must be a non-empty rectangle")
    return np.array(rows)


def cost_flip_demo(lambda_classes=(1.0, 3.0), lambda_pos: float = 1.0) -> dict:
    """One car and two candidates: A on the car with car-probability 0.2,
    B 1.5 m away with car-probability 0.9. Reports the matched candidate
    for each class weight."""
    candidates = [
        {"name": "A", "position": [0.0, 0.0], "car_prob": 0.2},
        {"name": "B", "position": [0.0, 1.5], "car_prob": 0.9},
    ]
    pos = np.array([c["position"] for c in candidates])
    probs = np.array([[c["car_prob"], 0.0, 0.0, 1.0 - c["car_prob"]] for c in candidates])
    settings = []
    for lc in lambda_classes:
        cm = build_cost_matrix(pos, probs, np.zeros((1, 2)), np.array([0]), lambda_pos, lc)
        a = hungarian_solve(cm)
        settings.append(
            {
                "lambda_pos": lambda_pos,
                "lambda_class": lc,
                "costs": {c["name"]: float(cm.entries[0, i]) for i, c in enumerate(candidates)},
                "matched": candidates[a.prediction_for(0)]["name"],
                "total_cost": a.total_cost,
            }
        )
    return {"gt": [0.0, 0.0], "candidates": candidates, "settings": settings}
