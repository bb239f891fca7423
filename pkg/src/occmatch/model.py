"""Engineered anchor features, small MLP heads and the training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .assign import NO_OBJECT, match_predictions
from .errors import InvalidConfig, NonFiniteLoss, ShapeMismatch
from .loss import PredictionSet, exact_cell_sigma, loss_and_gradients
from .scene import (
    DT,
    N_FUT,
    N_HIST,
    OBSERVED_AGENT,
    PRED_INDEX,
    AnchorSet,
    Scene,
    VisibilityMask,
    build_anchors,
    compute_visibility,
    ground_truth_at_prediction_time,
)

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "rel_x", "rel_y", "occluded", "from_observed_agent",
    "track_dx", "track_dy", "track_dist", "time_since_seen",
    "track_car", "track_pedestrian", "track_bicycle",
    "track_cos", "track_sin", "track_speed",
    "occluded_density", "has_track", "seen_fraction",
)
FEATURE_DIM = len(FEATURE_NAMES)
POSITION_SCALE = 30.0
TRACK_CAP = 8.0
SPEED_SCALE = 10.0
HIDDEN = 64
WEIGHTS_FORMAT = 1
HEADS = ("class", "pos", "traj", "mode")
REGIMES = ("hungarian", "hungarian-no-traj", "exact-ce")


# --- features ------------------------------------------------------------


class Track(NamedTuple):
    agent_id: int
    cls: int
    last_step: int
    point: np.ndarray  # constant-velocity position at the prediction step
    heading: np.ndarray
    speed: float
    visible_now: bool


@dataclass
class AnchorFeatures:
    anchors: np.ndarray  # (K, 2)
    values: np.ndarray  # (K, FEATURE_DIM)

    def __len__(self) -> int:
        return len(self.anchors)


def _to_ego(vec: np.ndarray, ego) -> np.ndarray:
    c, s = ego[2], ego[3]
    return np.stack([c * vec[..., 0] + s * vec[..., 1], -s * vec[..., 0] + c * vec[..., 1]], axis=-1)


def extract_tracks(scene: Scene, mask: VisibilityMask) -> list:
    """Constant-velocity extrapolation of every agent seen in the history."""
    tracks = []
    for i, agent in enumerate(scene.agents):
        seen = np.nonzero(mask.agent_visible[i])[0]
        if len(seen) == 0:
            continue
        last = int(seen[-1])
        p_last = agent.states[last, :2]
        if len(seen) >= 2:
            prev = int(seen[-2])
            vel = (p_last - agent.states[prev, :2]) / ((last - prev) * DT)
        else:
            vel = np.zeros(2)
        point = p_last + vel * (PRED_INDEX - last) * DT
        tracks.append(
            Track(agent.id, int(agent.cls), last, point, agent.states[last, 2:].copy(),
                  float(np.hypot(*vel)), bool(mask.agent_visible[i, PRED_INDEX]))
        )
    return tracks


def extract_features(scene: Scene, mask: VisibilityMask, anchors: AnchorSet) -> AnchorFeatures:
    K = len(anchors)
    feats = np.zeros((K, FEATURE_DIM))
    ego = scene.ego
    pts = anchors.points
    if K == 0:
        return AnchorFeatures(pts.reshape(0, 2), feats)
    feats[:, 0:2] = _to_ego(pts - np.asarray(ego[:2]), ego) / POSITION_SCALE
    feats[:, 3] = anchors.source == OBSERVED_AGENT

    tracks = extract_tracks(scene, mask)
    by_id = {t.agent_id: t for t in tracks}
    hidden = [t for t in tracks if not t.visible_now]
    hidden_pts = np.array([t.point for t in hidden]).reshape(-1, 2)

    grid = mask.grid
    occ_now = ~mask.cells[PRED_INDEX]
    padded = np.pad(occ_now.astype(float), 1, mode="edge")
    density = sum(padded[1 + dr : 1 + dr + grid.ny, 1 + dc : 1 + dc + grid.nx] for dr in (-1, 0, 1) for dc in (-1, 0, 1)) / 9.0
    seen_frac = mask.cells[:PRED_INDEX].mean(axis=0) if PRED_INDEX > 0 else np.zeros_like(density)

    for k in range(K):
        p = pts[k]
        if anchors.source[k] == OBSERVED_AGENT:
            track = by_id[int(anchors.agent_ids[k])]
            occluded = not track.visible_now
        else:
            track = None
            occluded = True
            if len(hidden):
                d = np.hypot(*(hidden_pts - p).T)
                j = int(np.argmin(d))
                if d[j] <= TRACK_CAP * math.sqrt(2):
                    track = hidden[j]
        feats[k, 2] = occluded
        cell = grid.cell_of(p)
        if cell is not None:
            feats[k, 14] = density[cell]
            feats[k, 16] = seen_frac[cell]
        if track is None:
            feats[k, 6] = 1.0
            continue
        off = np.clip(_to_ego(track.point - p, ego), -TRACK_CAP, TRACK_CAP)
        feats[k, 4:6] = off / TRACK_CAP
        feats[k, 6] = min(float(np.hypot(*off)), TRACK_CAP) / TRACK_CAP
        feats[k, 7] = (PRED_INDEX - track.last_step) * DT
        feats[k, 8 + track.cls] = 1.0
        feats[k, 11:13] = _to_ego(track.heading, ego)
        feats[k, 13] = track.speed / SPEED_SCALE
        feats[k, 15] = 1.0
    return AnchorFeatures(pts.copy(), feats)


# --- heads ---------------------------------------------------------------


def head_out_dims(M: int, T: int) -> dict:
    return {"class": 4, "pos": 4, "traj": M * T * 2, "mode": M}


@dataclass
class HeadWeights:
    """Per head: [W1, b1, W2, b2, W3, b3] with two tanh hidden layers."""

    heads: dict
    M: int
    T: int

    def copy(self) -> "HeadWeights":
        return HeadWeights({k: [p.copy() for p in v] for k, v in self.heads.items()}, self.M, self.T)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for h in HEADS for p in self.heads[h]])

    def validate(self, feature_dim: int = FEATURE_DIM) -> None:
        dims = head_out_dims(self.M, self.T)
        for h in HEADS:
            layers = self.heads.get(h)
            if layers is None or len(layers) != 6:
                raise ShapeMismatch(f"head {h!r} must have 3 dense layers")
            fan_in = feature_dim
            for W, b in zip(layers[0::2], layers[1::2]):
                if W.ndim != 2 or W.shape[0] != fan_in or b.shape != (W.shape[1],):
                    raise ShapeMismatch(f"head {h!r}: inconsistent layer shapes")
                fan_in = W.shape[1]
            if fan_in != dims[h]:
                raise ShapeMismatch(f"head {h!r}: output width {fan_in} != {dims[h]}")


def init_weights(M: int = 6, T: int = N_FUT, seed: int = 0, hidden: int = HIDDEN, feature_dim: int = FEATURE_DIM) -> HeadWeights:
    rng = np.random.default_rng(seed)
    heads = {}
    for h, out in head_out_dims(M, T).items():
        layers = []
        for fan_in, fan_out in ((feature_dim, hidden), (hidden, hidden), (hidden, out)):
            bound = 1.0 / math.sqrt(fan_in)
            layers.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            layers.append(rng.uniform(-bound, bound, size=fan_out))
        heads[h] = layers
    return HeadWeights(heads, M, T)


def _mlp_forward(layers, x):
    W1, b1, W2, b2, W3, b3 = layers
    h1 = np.tanh(x @ W1 + b1)
    h2 = np.tanh(h1 @ W2 + b2)
    return h2 @ W3 + b3, (x, h1, h2)


def _mlp_backward(layers, cache, g_out):
    W1, _, W2, _, W3, _ = layers
    x, h1, h2 = cache
    gW3 = h2.T @ g_out
    gb3 = g_out.sum(axis=0)
    g2 = (g_out @ W3.T) * (1.0 - h2**2)
    gW2 = h1.T @ g2
    gb2 = g2.sum(axis=0)
    g1 = (g2 @ W2.T) * (1.0 - h1**2)
    gW1 = x.T @ g1
    gb1 = g1.sum(axis=0)
    return [gW1, gb1, gW2, gb2, gW3, gb3]


def _check_feats(weights: HeadWeights, x: np.ndarray) -> None:
    if x.ndim != 2 or x.shape[1] != weights.heads["class"][0].shape[0]:
        raise ShapeMismatch(f"features of shape {x.shape} do not fit the heads")


def forward(weights: HeadWeights, feats: AnchorFeatures) -> PredictionSet:
    """Run all four heads on every anchor; pure, no state is kept."""
    x = feats.values
    _check_feats(weights, x)
    K = len(x)
    cls, _ = _mlp_forward(weights.heads["class"], x)
    pos, _ = _mlp_forward(weights.heads["pos"], x)
    traj, _ = _mlp_forward(weights.heads["traj"], x)
    mode, _ = _mlp_forward(weights.heads["mode"], x)
    return PredictionSet(
        anchors=feats.anchors,
        class_logits=cls,
        delta=pos[:, 0:2],
        heading_raw=pos[:, 2:4],
        mode_logits=mode,
        modes=traj.reshape(K, weights.M, weights.T, 2),
    )


# --- training ------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 50
    seed: int = 0
    M: int = 6
    T: int = N_FUT
    lambda_pos: float = 1.0
    lambda_class: float = 3.0
    weights: tuple = (1.0, 1.0, 1.0)
    regime: str = "hungarian"
    positive_weight: float = 50.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ray_count: int = 720

    def validate(self) -> None:
        if not (self.learning_rate > 0 and self.batch_size >= 1 and self.epochs >= 0):
            raise InvalidConfig("learning_rate, batch_size must be positive and epochs >= 0")
        if self.M < 1 or self.T < 1 or self.T > N_FUT:
            raise InvalidConfig(f"need M >= 1 and 1 <= T <= {N_FUT}")
        if self.lambda_pos < 0 or self.lambda_class < 0 or min(self.weights) < 0 or len(self.weights) != 3:
            raise InvalidConfig("matching and loss weights must be non-negative")
        if self.regime not in REGIMES:
            raise InvalidConfig(f"regime must be one of {REGIMES}")
        if not self.positive_weight > 0:
            raise InvalidConfig("positive_weight must be > 0")

    def loss_weights(self) -> tuple:
        w1, w2, w3 = self.weights
        return (w1, w2, 0.0) if self.regime == "hungarian-no-traj" else (w1, w2, w3)


class Sample(NamedTuple):
    feats: AnchorFeatures
    gts: list


def prepare_sample(scene: Scene, T: int = N_FUT, ray_count: int = 720) -> Sample:
    mask = compute_visibility(scene, ray_count)
    anchors = build_anchors(scene, mask)
    gts = ground_truth_at_prediction_time(scene, mask)
    if T != N_FUT:
        gts = [g._replace(future=g.future[:T]) for g in gts]
    return Sample(extract_features(scene, mask, anchors), gts)


class Adam:
    def __init__(self, weights: HeadWeights, lr, beta1, beta2, eps):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {h: [np.zeros_like(p) for p in weights.heads[h]] for h in HEADS}
        self.v = {h: [np.zeros_like(p) for p in weights.heads[h]] for h in HEADS}
        self.t = 0

    def step(self, weights: HeadWeights, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for h in HEADS:
            for i, g in enumerate(grads[h]):
                m = self.m[h][i]
                v = self.v[h][i]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                weights.heads[h][i] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _sigma_for(preds: PredictionSet, gts, config: TrainConfig) -> np.ndarray:
    if config.regime == "exact-ce":
        return exact_cell_sigma(preds.anchors, np.array([g.pos for g in gts]).reshape(-1, 2))
    return match_predictions(preds, gts, config.lambda_pos, config.lambda_class).sigma


def scene_loss_and_grads(weights: HeadWeights, sample: Sample, config: TrainConfig, need_grad: bool = True):
    """Loss breakdown and per-head parameter gradients for one scene.

    Trajectory heads run only on matched anchors: unmatched anchors do not
    enter the trajectory terms.
    """
    x = sample.feats.values
    K = len(x)
    w = config.loss_weights()
    cls, c_cache = _mlp_forward(weights.heads["class"], x)
    pos, p_cache = _mlp_forward(weights.heads["pos"], x)
    M, T = weights.M, weights.T
    if not (np.all(np.isfinite(cls)) and np.all(np.isfinite(pos))):
        raise FloatingPointError("non-finite head outputs")
    preds = PredictionSet(sample.feats.anchors, cls, pos[:, :2], pos[:, 2:], np.zeros((K, M)), np.zeros((K, 0, T, 2)))
    sigma = _sigma_for(preds, sample.gts, config)
    rows = np.nonzero(sigma != NO_OBJECT)[0]
    use_traj = w[2] != 0.0
    modes_rows = None
    if use_traj and len(rows):
        traj, t_cache = _mlp_forward(weights.heads["traj"], x[rows])
        mode, m_cache = _mlp_forward(weights.heads["mode"], x[rows])
        modes_rows = traj.reshape(len(rows), M, T, 2)
        preds.mode_logits[rows] = mode
    regime = "exact_ce" if config.regime == "exact-ce" else "hungarian"
    breakdown, g = loss_and_gradients(
        preds, sample.gts, sigma, w, need_grad=need_grad, regime=regime,
        positive_weight=config.positive_weight, modes_rows=modes_rows if use_traj else np.zeros((len(rows), M, T, 2)),
    )
    if not need_grad:
        return breakdown, sigma, None
    grads = {
        "class": _mlp_backward(weights.heads["class"], c_cache, g.class_logits),
        "pos": _mlp_backward(weights.heads["pos"], p_cache, np.concatenate([g.delta, g.heading_raw], axis=1)),
    }
    if use_traj and len(rows):
        grads["traj"] = _mlp_backward(weights.heads["traj"], t_cache, g.modes.reshape(len(rows), -1))
        grads["mode"] = _mlp_backward(weights.heads["mode"], m_cache, g.mode_logits[rows])
    else:
        grads["traj"] = [np.zeros_like(p) for p in weights.heads["traj"]]
        grads["mode"] = [np.zeros_like(p) for p in weights.heads["mode"]]
    return breakdown, sigma, grads


def redundancy_ratio(weights: HeadWeights, samples, threshold: float = 0.5) -> float:
    """Predicted-positive anchors per ground-truth agent."""
    positives = 0
    agents = 0
    for s in samples:
        cls, _ = _mlp_forward(weights.heads["class"], s.feats.values)
        z = cls - cls.max(axis=1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        positives += int(np.sum(1.0 - p[:, 3] > threshold))
        agents += len(s.gts)
    return positives / agents if agents else 0.0


@dataclass
class EpochRecord:
    epoch: int
    class_loss: float
    pos_loss: float
    traj_loss: float
    total: float
    redundancy_ratio: Optional[float] = None


def train(scenes, config: TrainConfig, probe=None, samples=None, progress=None):
    """Fit the heads; returns (weights, list of EpochRecord).

    Deterministic for fixed (scenes, config). ``samples`` may pass
    precomputed ``Sample`` objects to skip visibility and features.
    """
    config.validate()
    if samples is None:
        if not scenes:
            raise InvalidConfig("train needs at least one scene")
        samples = [prepare_sample(s, config.T, config.ray_count) for s in scenes]
    if not samples:
        raise InvalidConfig("train needs at least one scene")
    probe_samples = [prepare_sample(s, config.T, config.ray_count) for s in probe] if probe else []
    weights = init_weights(config.M, config.T, config.seed)
    opt = Adam(weights, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng(config.seed + 1)
    history = []
    step = 0
    n = len(samples)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(4)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            acc = {h: [np.zeros_like(p) for p in weights.heads[h]] for h in HEADS}
            for idx in batch:
                try:
                    br, _, grads = scene_loss_and_grads(weights, samples[idx], config)
                except FloatingPointError as e:
                    raise NonFiniteLoss(step, f"scene {int(idx)}: {e}") from None
                if not math.isfinite(br.total):
                    raise NonFiniteLoss(step, f"scene {int(idx)}")
                sums += (br.class_loss, br.pos_loss, br.traj_loss, br.total)
                for h in HEADS:
                    for a, g in zip(acc[h], grads[h]):
                        a += g
            scale = 1.0 / len(batch)
            opt.step(weights, {h: [a * scale for a in acc[h]] for h in HEADS})
            step += 1
        rec = EpochRecord(epoch, *(float(v / n) for v in sums))
        if probe_samples:
            rec.redundancy_ratio = redundancy_ratio(weights, probe_samples)
        history.append(rec)
        log.info("epoch %d total %.4f", epoch, rec.total)
        if progress is not None:
            progress(rec)
    return weights, history


# --- prediction ----------------------------------------------------------


class ScenePrediction(NamedTuple):
    preds: PredictionSet
    class_probs: np.ndarray  # (K, 4)
    global_modes: np.ndarray  # (K, M, T, 2)
    gts: list
    anchor_count: int


def predict(weights: HeadWeights, scene: Scene, ray_count: int = 720) -> ScenePrediction:
    sample = prepare_sample(scene, weights.T, ray_count)
    preds = forward(weights, sample.feats)
    return ScenePrediction(preds, preds.class_probs(), preds.global_modes(), sample.gts, len(preds))


# --- weights file --------------------------------------------------------


def weights_to_dict(weights: HeadWeights) -> dict:
    return {
        "format": WEIGHTS_FORMAT,
        "feature_names": list(FEATURE_NAMES),
        "M": weights.M,
        "T": weights.T,
        "heads": {
            h: [{"shape": list(p.shape), "values": [float(v) for v in p.ravel()]} for p in weights.heads[h]]
            for h in HEADS
        },
    }


def weights_from_dict(d: dict) -> HeadWeights:
    if d.get("format") != WEIGHTS_FORMAT:
        raise InvalidConfig(f"unsupported weights format {d.get('format')!r}")
    heads = {
        h: [np.array(layer["values"], dtype=np.float64).reshape(layer["shape"]) for layer in d["heads"][h]]
        for h in HEADS
    }
    w = HeadWeights(heads, int(d["M"]), int(d["T"]))
    w.validate(len(d.get("feature_names", FEATURE_NAMES)))
    return w


def save_weights(weights: HeadWeights, path) -> None:
    Path(path).write_text(json.dumps(weights_to_dict(weights), separators=(",", ":")) + "\n")


def load_weights(path) -> HeadWeights:
    return weights_from_dict(json.loads(Path(path).read_text()))


def training_log_lines(history) -> list:
    return [json.dumps(asdict(r), sort_keys=True) for r in history]
