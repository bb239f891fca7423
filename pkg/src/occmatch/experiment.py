"""Evaluation driver and the regime comparison used by the CLI and tests."""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .metrics import DEFAULT_THRESHOLDS, EvalInput, evaluate_scene, summarize
from .model import HeadWeights, TrainConfig, predict, prepare_sample, train
from .scene import GeneratorConfig, build_anchors, compute_visibility, generate_scene, ground_truth_at_prediction_time

# Scene mix used for the regime comparison: denser than the generator
# defaults so occlusions are common.
EXPERIMENT_SCENE = dict(n_cars=10, n_pedestrians=3, n_bicycles=2, n_obstacles=2, region_half=30.0)
EXPERIMENT_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)


def model_predictor(weights: HeadWeights, ray_count: int = 720):
    def run(scene) -> EvalInput:
        sp = predict(weights, scene, ray_count)
        return EvalInput(sp.preds.anchors, sp.preds.positions(), 1.0 - sp.class_probs[:, 3], sp.global_modes, sp.gts)

    return run


def oracle_predictor(ray_count: int = 720):
    """Test hook: emits every ground-truth agent as a confident prediction."""

    def run(scene) -> EvalInput:
        mask = compute_visibility(scene, ray_count)
        anchors = build_anchors(scene, mask)
        gts = ground_truth_at_prediction_time(scene, mask)
        n = len(gts)
        pos = np.array([g.pos for g in gts]).reshape(n, 2)
        modes = np.array([g.future for g in gts]).reshape(n, 1, -1, 2)
        return EvalInput(anchors.points, pos, np.ones(n), modes, gts)

    return run


def empty_predictor(ray_count: int = 720):
    """Test hook: predicts no class at every anchor."""

    def run(scene) -> EvalInput:
        mask = compute_visibility(scene, ray_count)
        anchors = build_anchors(scene, mask)
        gts = ground_truth_at_prediction_time(scene, mask)
        K = len(anchors)
        return EvalInput(anchors.points, anchors.points, np.zeros(K), np.zeros((K, 1, 1, 2)), gts)

    return run


def evaluate(predictor, scenes, thresholds=DEFAULT_THRESHOLDS) -> list:
    """Metrics rows grouped by occlusion level, plus an ``all`` row."""
    evals = [evaluate_scene(predictor(scene), thresholds) for scene in scenes]
    return summarize_by_level([s.occlusion_level for s in scenes], evals, thresholds)


def summarize_by_level(levels, evals, thresholds=DEFAULT_THRESHOLDS) -> list:
    """Group per-scene evaluations by occlusion level, in input order."""
    groups = defaultdict(list)
    every = []
    for level, ev in zip(levels, evals):
        groups[level].append(ev)
        every.append(ev)
    rows = []
    for level in sorted(groups):
        rows.append({"occlusion_level": f"{level:g}", **summarize(groups[level], thresholds)})
    if len(groups) > 1:
        rows.append({"occlusion_level": "all", **summarize(every, thresholds)})
    return rows


def experiment_scenes(count: int, seed: int, levels=EXPERIMENT_LEVELS, **overrides) -> list:
    """``count`` scenes cycling through ``levels``; scene i uses seed ``seed + i``."""
    params = {**EXPERIMENT_SCENE, **overrides}
    return [
        generate_scene(GeneratorConfig(occlusion_level=levels[i % len(levels)], **params), seed + i)
        for i in range(count)
    ]


def compare_regimes(train_scenes, eval_scenes, base: TrainConfig, regimes=("hungarian", "exact-ce"), progress=None) -> dict:
    """Train one model per regime on identical data and evaluate each."""
    samples = [prepare_sample(s, base.T, base.ray_count) for s in train_scenes]
    out = {}
    for regime in regimes:
        cfg = TrainConfig(**{**base.__dict__, "regime": regime})
        weights, history = train(None, cfg, samples=samples, progress=progress)
        rows = evaluate(model_predictor(weights, base.ray_count), eval_scenes)
        out[regime] = {"weights": weights, "history": history, "rows": rows, "overall": rows[-1]}
    return out
