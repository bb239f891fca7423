"""Confusion counts under distance-thresholded matching, MCC@d, auxiliary
rates and minADE/minFDE."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .assign import NO_OBJECT, distance_assignment
from .loss import exact_cell_sigma
from .scene import GRID_RES

DEFAULT_THRESHOLDS = (0.0, 1.0, 2.0, 3.0, 4.0)
OCCUPANCY_THRESHOLD = 0.5
TRAJECTORY_MATCH_DISTANCE = 2.0


class InvalidCount(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise InvalidCount(f"negative confusion count in {self}")

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def threshold_confusion(predicted_positives, gts, all_anchor_count: int, d: float) -> ConfusionMatrix:
    """Optimal distance matching, then pairs within ``d`` count as TP."""
    if d < 0:
        raise ValueError("distance threshold must be >= 0")
    pred = np.asarray(predicted_positives, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gts, dtype=np.float64).reshape(-1, 2)
    tp = sum(1 for _, _, dist in distance_assignment(pred, gt) if dist <= d)
    fp = len(pred) - tp
    fn = len(gt) - tp
    tn = all_anchor_count - tp - fp - fn
    if tn < 0:
        raise InvalidCount(f"all_anchor_count={all_anchor_count} < TP+FP+FN={tp + fp + fn}")
    return ConfusionMatrix(tp, fp, fn, tn)


def mcc(cm: ConfusionMatrix) -> float:
    """Matthews correlation; 0 when any marginal is empty."""
    tp, fp, fn, tn = cm.tp, cm.fp, cm.fn, cm.tn
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


class Rates(NamedTuple):
    sensitivity: float
    specificity: float
    precision: float
    npv: float
    f1: float
    degenerate: tuple  # names of rates whose denominator was zero


def _ratio(num, den, name, degenerate):
    if den == 0:
        degenerate.append(name)
        return 0.0
    return num / den


def auxiliary_rates(cm: ConfusionMatrix) -> Rates:
    degenerate: list = []
    sens = _ratio(cm.tp, cm.tp + cm.fn, "sensitivity", degenerate)
    spec = _ratio(cm.tn, cm.tn + cm.fp, "specificity", degenerate)
    prec = _ratio(cm.tp, cm.tp + cm.fp, "precision", degenerate)
    npv = _ratio(cm.tn, cm.tn + cm.fn, "npv", degenerate)
    f1 = _ratio(2 * prec * sens, prec + sens, "f1", degenerate)
    return Rates(sens, spec, prec, npv, f1, tuple(degenerate))


class TrajectoryErrors(NamedTuple):
    min_ade: float
    min_fde: float
    occluded: bool


def trajectory_errors(pred_modes, gt_future, occluded: bool = False) -> TrajectoryErrors:
    """Best-of-M average and final displacement, minimized independently."""
    modes = np.asarray(pred_modes, dtype=np.float64)
    gt = np.asarray(gt_future, dtype=np.float64)
    if modes.ndim != 3 or modes.shape[1:] != gt.shape:
        raise ValueError(f"modes {modes.shape} do not match ground truth {gt.shape}")
    err = np.linalg.norm(modes - gt[None], axis=-1)  # (M, T)
    return TrajectoryErrors(float(err.mean(axis=1).min()), float(err[:, -1].min()), bool(occluded))


# --- scene-level evaluation ----------------------------------------------


class EvalInput(NamedTuple):
    """What a predictor exposes for one scene."""

    anchors: np.ndarray  # (K, 2) anchor points before any predicted offset
    positions: np.ndarray  # (K, 2)
    occupancy: np.ndarray  # (K,)
    global_modes: np.ndarray  # (K, M, T, 2)
    gts: list

    @property
    def anchor_count(self) -> int:
        return len(self.anchors)


def uncovered_agents(anchors, gt_pts, cell: float = GRID_RES) -> int:
    """Agents whose position falls in no anchor's cell.

    Such agents have no anchor that could stand for them, so each adds one
    slot to the evaluated set; this keeps TN = slots - TP - FP - FN >= 0.
    """
    return int(np.sum(exact_cell_sigma(gt_pts, anchors, cell) == NO_OBJECT))


@dataclass
class SceneEval:
    confusion: dict  # threshold -> ConfusionMatrix
    trajectory: list  # TrajectoryErrors
    positives: int
    agents: int


def evaluate_scene(inp: EvalInput, thresholds=DEFAULT_THRESHOLDS, occupancy_threshold=OCCUPANCY_THRESHOLD) -> SceneEval:
    pos_idx = np.nonzero(inp.occupancy > occupancy_threshold)[0]
    pred_pts = inp.positions[pos_idx]
    gt_pts = np.array([g.pos for g in inp.gts]).reshape(-1, 2)
    count = max(inp.anchor_count + uncovered_agents(inp.anchors, gt_pts), len(pos_idx) + len(gt_pts))
    confusion = {d: threshold_confusion(pred_pts, gt_pts, count, d) for d in thresholds}
    traj = []
    for i, j, dist in distance_assignment(pred_pts, gt_pts):
        if dist <= TRAJECTORY_MATCH_DISTANCE:
            g = inp.gts[j]
            modes = inp.global_modes[pos_idx[i]][:, : len(g.future)]
            traj.append(trajectory_errors(modes, g.future[: modes.shape[1]], g.occluded))
    return SceneEval(confusion, traj, len(pos_idx), len(inp.gts))


def mcc_at_thresholds(evals, thresholds=DEFAULT_THRESHOLDS) -> dict:
    """Sum confusion counts over scenes per threshold, then take MCC."""
    if list(thresholds) != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    out = {}
    for d in thresholds:
        cm = ConfusionMatrix()
        for e in evals:
            cm = cm + e.confusion[d]
        out[d] = mcc(cm)
    return out


def _mean(xs):
    return float(np.mean(xs)) if xs else float("nan")


def summarize(evals, thresholds=DEFAULT_THRESHOLDS, rate_threshold: float = 2.0) -> dict:
    """One metrics row for a group of scenes."""
    row = {f"MCC@{d:g}": v for d, v in mcc_at_thresholds(evals, thresholds).items()}
    cm = ConfusionMatrix()
    for e in evals:
        cm = cm + e.confusion[rate_threshold if rate_threshold in thresholds else thresholds[-1]]
    rates = auxiliary_rates(cm)
    row.update(sensitivity=rates.sensitivity, specificity=rates.specificity, precision=rates.precision, npv=rates.npv, f1=rates.f1)
    trajs = [t for e in evals for t in e.trajectory]
    row["minADE_occ"] = _mean([t.min_ade for t in trajs if t.occluded])
    row["minADE_obs"] = _mean([t.min_ade for t in trajs if not t.occluded])
    row["minFDE_occ"] = _mean([t.min_fde for t in trajs if t.occluded])
    row["minFDE_obs"] = _mean([t.min_fde for t in trajs if not t.occluded])
    agents = sum(e.agents for e in evals)
    row["redundancy_ratio"] = sum(e.positives for e in evals) / agents if agents else 0.0
    return row


def report_columns(thresholds=DEFAULT_THRESHOLDS) -> list:
    return (
        ["occlusion_level"]
        + [f"MCC@{d:g}" for d in thresholds]
        + ["sensitivity", "specificity", "precision", "npv", "f1",
           "minADE_occ", "minADE_obs", "minFDE_occ", "minFDE_obs", "redundancy_ratio"]
    )


def format_report(rows, thresholds=DEFAULT_THRESHOLDS) -> str:
    """CSV text with a fixed column order and 6-decimal values."""
    cols = report_columns(thresholds)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([r[c] if c == "occlusion_level" else f"{r[c]:.6f}" for c in cols])
    return buf.getvalue()
