"""Synthetic traffic scenes, ray-cast visibility and anchor construction.

Time layout: every agent carries ``N_HIST + N_FUT`` states at ``DT`` spacing.
History indices ``0..N_HIST-1`` cover t = -0.9 s .. 0.0 s; the prediction
timestep is the last history step (``PRED_INDEX``, t = 0).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .errors import InvalidConfig
from .geom import Point2, Segment2

DT = 0.1
N_HIST = 10
N_FUT = 40
PRED_INDEX = N_HIST - 1
GRID_RES = 1.5
DEFAULT_RAY_COUNT = 720
FORMAT_VERSION = 1


class AgentClass(enum.IntEnum):
    CAR = 0
    PEDESTRIAN = 1
    BICYCLE = 2
    NO_CLASS = 3


NUM_CLASSES = len(AgentClass)

CLASS_DIMS = {
    AgentClass.CAR: (4.5, 1.8),
    AgentClass.PEDESTRIAN: (0.6, 0.6),
    AgentClass.BICYCLE: (1.8, 0.6),
}
SPEED_RANGE = {
    AgentClass.CAR: (3.0, 12.0),
    AgentClass.PEDESTRIAN: (0.5, 2.0),
    AgentClass.BICYCLE: (2.0, 6.0),
}
TEMPLATES = ("constant_velocity", "constant_turn", "stopped")


def step_times() -> np.ndarray:
    return np.round((np.arange(N_HIST + N_FUT) - PRED_INDEX) * DT, 1)


@dataclass
class Agent:
    id: int
    cls: AgentClass
    length: float
    width: float
    states: np.ndarray  # (N_HIST + N_FUT, 4): x, y, cos, sin
    occluder: bool = False

    def __post_init__(self):
        if self.cls == AgentClass.NO_CLASS:
            raise InvalidConfig("ground-truth agents cannot be NoClass")
        if not (self.length > 0 and self.width > 0):
            raise InvalidConfig("footprint dims must be positive")
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.shape != (N_HIST + N_FUT, 4):
            raise InvalidConfig(f"agent {self.id}: expected {N_HIST + N_FUT} states")

    def footprint_edges(self, step: int) -> np.ndarray:
        """(4, 4) rectangle edges at ``step`` as rows (ax, ay, bx, by)."""
        x, y, c, s = self.states[step]
        hl, hw = self.length / 2, self.width / 2
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        corners = np.stack([x + c * local[:, 0] - s * local[:, 1], y + s * local[:, 0] + c * local[:, 1]], axis=1)
        return np.concatenate([corners, np.roll(corners, -1, axis=0)], axis=1)


@dataclass
class Scene:
    ego: tuple  # (x, y, cos, sin)
    agents: list
    static_obstacles: list
    region: tuple  # (xmin, ymin, xmax, ymax)
    occlusion_level: float
    seed: int

    def __post_init__(self):
        xmin, ymin, xmax, ymax = self.region
        if not (xmin < xmax and ymin < ymax):
            raise InvalidConfig("region must be nonempty")
        if not (xmin <= self.ego[0] <= xmax and ymin <= self.ego[1] <= ymax):
            raise InvalidConfig("ego must lie inside the region")
        if not 0.0 <= self.occlusion_level <= 1.0:
            raise InvalidConfig("occlusion_level must lie in [0, 1]")

    @property
    def occluders(self) -> list:
        return [a for a in self.agents if a.occluder]

    def occluder_edges(self, step: int, exclude: Optional[int] = None) -> np.ndarray:
        parts = [np.asarray([[*s.a, *s.b] for s in self.static_obstacles], dtype=np.float64).reshape(-1, 4)]
        parts += [a.footprint_edges(step) for a in self.agents if a.occluder and a.id != exclude]
        return np.concatenate(parts, axis=0)

    def to_dict(self) -> dict:
        times = step_times()
        return {
            "format": FORMAT_VERSION,
            "region": list(self.region),
            "ego": {"x": self.ego[0], "y": self.ego[1], "cos": self.ego[2], "sin": self.ego[3]},
            "occlusion_level": self.occlusion_level,
            "seed": self.seed,
            "agents": [
                {
                    "id": a.id,
                    "class": a.cls.name.lower(),
                    "dims": [a.length, a.width],
                    "occluder": a.occluder,
                    "states": [
                        {"t": float(t), "x": float(r[0]), "y": float(r[1]), "cos": float(r[2]), "sin": float(r[3])}
                        for t, r in zip(times, a.states)
                    ],
                }
                for a in self.agents
            ],
            "obstacles": [[list(map(float, s.a)), list(map(float, s.b))] for s in self.static_obstacles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        if d.get("format") != FORMAT_VERSION:
            raise InvalidConfig(f"unsupported scene format {d.get('format')!r}")
        agents = [
            Agent(
                id=int(a["id"]),
                cls=AgentClass[a["class"].upper()],
                length=float(a["dims"][0]),
                width=float(a["dims"][1]),
                states=np.array([[s["x"], s["y"], s["cos"], s["sin"]] for s in a["states"]]),
                occluder=bool(a.get("occluder", False)),
            )
            for a in d["agents"]
        ]
        e = d["ego"]
        return cls(
            ego=(e["x"], e["y"], e["cos"], e["sin"]),
            agents=agents,
            static_obstacles=[Segment2(Point2(*a), Point2(*b)) for a, b in d["obstacles"]],
            region=tuple(d["region"]),
            occlusion_level=float(d["occlusion_level"]),
            seed=int(d["seed"]),
        )


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene.to_dict(), indent=1, sort_keys=True) + "\n"


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(dumps_scene(scene))


def load_scene(path) -> Scene:
    return Scene.from_dict(json.loads(Path(path).read_text()))


# --- generation ----------------------------------------------------------


@dataclass
class GeneratorConfig:
    n_cars: int = 4
    n_pedestrians: int = 2
    n_bicycles: int = 1
    region_half: float = 30.0
    occlusion_level: float = 0.5
    n_obstacles: int = 0
    min_ego_clearance: float = 4.0
    min_separation: float = 3.0
    template_probs: tuple = (0.5, 0.3, 0.2)
    max_yaw_rate: float = 0.4

    def validate(self) -> None:
        if min(self.n_cars, self.n_pedestrians, self.n_bicycles, self.n_obstacles) < 0:
            raise InvalidConfig("agent and obstacle counts must be >= 0")
        if not self.region_half > 0:
            raise InvalidConfig("region must be nonempty")
        if not 0.0 <= self.occlusion_level <= 1.0:
            raise InvalidConfig(f"occlusion_level {self.occlusion_level} outside [0, 1]")
        if len(self.template_probs) != 3 or abs(sum(self.template_probs) - 1.0) > 1e-9:
            raise InvalidConfig("template_probs must be three probabilities summing to 1")


def _rollout(p0, theta0, speed, yaw_rate) -> np.ndarray:
    t = step_times()
    theta = theta0 + yaw_rate * t
    if abs(yaw_rate) < 1e-9:
        x = p0[0] + speed * t * math.cos(theta0)
        y = p0[1] + speed * t * math.sin(theta0)
    else:
        r = speed / yaw_rate
        x = p0[0] + r * (np.sin(theta) - math.sin(theta0))
        y = p0[1] - r * (np.cos(theta) - math.cos(theta0))
    return np.stack([x, y, np.cos(theta), np.sin(theta)], axis=1)


def _rect_segments(cx, cy, hx, hy) -> list:
    pts = [Point2(cx - hx, cy - hy), Point2(cx + hx, cy - hy), Point2(cx + hx, cy + hy), Point2(cx - hx, cy + hy)]
    return [Segment2(pts[i], pts[(i + 1) % 4]) for i in range(4)]


def generate_scene(config: GeneratorConfig, seed: int) -> Scene:
    """Sample a scene; identical (config, seed) give identical scenes."""
    config.validate()
    rng = np.random.default_rng(seed)
    half = config.region_half
    margin = min(2.0, half / 4)
    classes = (
        [AgentClass.CAR] * config.n_cars
        + [AgentClass.PEDESTRIAN] * config.n_pedestrians
        + [AgentClass.BICYCLE] * config.n_bicycles
    )
    placed: list = []
    agents = []
    for idx, cls in enumerate(classes):
        for _ in range(200):
            p = rng.uniform(-half + margin, half - margin, size=2)
            if math.hypot(*p) < config.min_ego_clearance:
                continue
            if all(math.hypot(p[0] - q[0], p[1] - q[1]) >= config.min_separation for q in placed):
                break
        placed.append(p)
        template = TEMPLATES[int(rng.choice(3, p=config.template_probs))]
        theta0 = float(rng.uniform(-math.pi, math.pi))
        lo, hi = SPEED_RANGE[cls]
        speed = float(rng.uniform(lo, hi))
        yaw_rate = float(rng.uniform(-config.max_yaw_rate, config.max_yaw_rate))
        if template == "stopped":
            speed, yaw_rate = 0.0, 0.0
        elif template == "constant_velocity":
            yaw_rate = 0.0
        length, width = CLASS_DIMS[cls]
        occluder = bool(rng.random() < config.occlusion_level)
        agents.append(
            Agent(idx, cls, length, width, _rollout((float(p[0]), float(p[1])), theta0, speed, yaw_rate), occluder)
        )
    obstacles = []
    for _ in range(config.n_obstacles):
        for _ in range(200):
            c = rng.uniform(-half + 3, half - 3, size=2)
            hx, hy = rng.uniform(1.0, 3.0, size=2)
            if abs(c[0]) > hx + 2 or abs(c[1]) > hy + 2:
                break
        obstacles += _rect_segments(float(c[0]), float(c[1]), float(hx), float(hy))
    return Scene(
        ego=(0.0, 0.0, 1.0, 0.0),
        agents=agents,
        static_obstacles=obstacles,
        region=(-half, -half, half, half),
        occlusion_level=float(config.occlusion_level),
        seed=int(seed),
    )


# --- visibility ----------------------------------------------------------


@dataclass
class Grid:
    xmin: float
    ymin: float
    res: float
    nx: int
    ny: int

    @classmethod
    def for_region(cls, region, res: float = GRID_RES) -> "Grid":
        xmin, ymin, xmax, ymax = region
        nx = max(1, int(round((xmax - xmin) / res)))
        ny = max(1, int(round((ymax - ymin) / res)))
        return cls(float(xmin), float(ymin), float(res), nx, ny)

    def centers(self) -> np.ndarray:
        """(ny, nx, 2) cell centers; row index is y."""
        xs = self.xmin + (np.arange(self.nx) + 0.5) * self.res
        ys = self.ymin + (np.arange(self.ny) + 0.5) * self.res
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    def cell_of(self, p) -> tuple:
        """(row, col) of the cell containing ``p``, or None outside the grid."""
        col = int(math.floor((p[0] - self.xmin) / self.res))
        row = int(math.floor((p[1] - self.ymin) / self.res))
        if 0 <= col < self.nx and 0 <= row < self.ny:
            return row, col
        return None


@dataclass
class VisibilityMask:
    grid: Grid
    cells: np.ndarray  # (N_HIST, ny, nx) bool, True = visible
    agent_visible: np.ndarray  # (n_agents, N_HIST) bool
    agent_ids: list = field(default_factory=list)
    ray_count: int = DEFAULT_RAY_COUNT

    def agent_observed_at(self, agent_id: int, step: int) -> bool:
        return bool(self.agent_visible[self.agent_ids.index(agent_id), step])


def _cell_windows(grid: Grid, origin, ray_count: int):
    """Ray index window and center distance for every cell.

    A cell is tested against every ray whose direction falls within the
    angular extent of the cell as seen from ``origin``. Cells too narrow to
    contain a ray fall back to the ray nearest their center direction.
    """
    centers = grid.centers().reshape(-1, 2)
    ox, oy = origin
    step = 2 * math.pi / ray_count
    h = grid.res / 2
    offs = np.array([[-h, -h], [h, -h], [h, h], [-h, h]])
    rel_c = centers - (ox, oy)
    dist = np.hypot(rel_c[:, 0], rel_c[:, 1])
    phi_c = np.arctan2(rel_c[:, 1], rel_c[:, 0])
    corners = rel_c[:, None, :] + offs[None]
    corner_d = np.hypot(corners[..., 0], corners[..., 1])
    diff = np.arctan2(corners[..., 1], corners[..., 0]) - phi_c[:, None]
    diff = (diff + math.pi) % (2 * math.pi) - math.pi
    diff = np.where(corner_d > 1e-9, diff, 0.0)
    lo = phi_c + diff.min(axis=1)
    hi = phi_c + diff.max(axis=1)
    k_lo = np.ceil(lo / step - 1e-9).astype(np.int64)
    k_hi = np.floor(hi / step + 1e-9).astype(np.int64)
    empty = k_lo > k_hi
    nearest = np.round(phi_c / step).astype(np.int64)
    k_lo = np.where(empty, nearest, k_lo)
    k_hi = np.where(empty, nearest, k_hi)
    inside = (np.abs(rel_c[:, 0]) <= h) & (np.abs(rel_c[:, 1]) <= h)
    dist = np.where(inside, 0.0, dist)
    return k_lo, k_hi, dist


def segment_blocked(origin, target, edges: np.ndarray) -> bool:
    """True if the open segment origin->target crosses any edge."""
    if len(edges) == 0:
        return False
    ox, oy = origin
    dx, dy = target[0] - ox, target[1] - oy
    ax, ay = edges[:, 0], edges[:, 1]
    ex, ey = edges[:, 2] - ax, edges[:, 3] - ay
    wx, wy = ax - ox, ay - oy
    denom = dx * ey - dy * ex
    nz = np.abs(denom) > 1e-12
    safe = np.where(nz, denom, 1.0)
    t = (wx * ey - wy * ex) / safe
    u = (wx * dy - wy * dx) / safe
    return bool(np.any(nz & (t >= 0.0) & (t < 1.0) & (u >= 0.0) & (u <= 1.0)))


def compute_visibility(scene: Scene, ray_count: int = DEFAULT_RAY_COUNT, grid_res: float = GRID_RES) -> VisibilityMask:
    """Ray-cast from the ego at every history step.

    Agents are observed when the sight line to their center is not crossed
    by any occluder other than their own footprint.
    """
    if ray_count < 36:
        raise InvalidConfig("ray_count must be >= 36")
    grid = Grid.for_region(scene.region, grid_res)
    origin = scene.ego[:2]
    k_lo, k_hi, dist = _cell_windows(grid, origin, ray_count)
    cells = np.zeros((N_HIST, grid.ny, grid.nx), dtype=bool)
    agent_vis = np.zeros((len(scene.agents), N_HIST), dtype=bool)
    for step in range(N_HIST):
        edges = np.ascontiguousarray(scene.occluder_edges(step))
        hits = kernels.ray_hits(float(origin[0]), float(origin[1]), ray_count, edges)
        cells[step] = kernels.window_reaches(hits, k_lo, k_hi, dist, 1e-9).reshape(grid.ny, grid.nx)
        for i, agent in enumerate(scene.agents):
            others = scene.occluder_edges(step, exclude=agent.id)
            agent_vis[i, step] = not segment_blocked(origin, agent.states[step, :2], others)
    return VisibilityMask(grid, cells, agent_vis, [a.id for a in scene.agents], ray_count)


# --- anchors and targets -------------------------------------------------

OBSERVED_AGENT = 0
OCCLUDED_GRID = 1


@dataclass
class AnchorSet:
    points: np.ndarray  # (K, 2)
    source: np.ndarray  # (K,) OBSERVED_AGENT / OCCLUDED_GRID
    agent_ids: np.ndarray  # (K,) source agent id, -1 for grid anchors
    last_seen_step: np.ndarray  # (K,) history index of last observation, -1 for grid anchors

    def __len__(self) -> int:
        return len(self.points)


def build_anchors(scene: Scene, mask: VisibilityMask) -> AnchorSet:
    pts, src, ids, seen = [], [], [], []
    for i, agent in enumerate(scene.agents):
        vis = np.nonzero(mask.agent_visible[i])[0]
        if len(vis) == 0:
            continue
        last = int(vis[-1])
        p = agent.states[last, :2]
        if any(np.hypot(*(p - q)) <= 1e-6 for q in pts):
            continue
        pts.append(p.copy())
        src.append(OBSERVED_AGENT)
        ids.append(agent.id)
        seen.append(last)
    centers = mask.grid.centers()[~mask.cells[PRED_INDEX]]
    observed = np.array(pts).reshape(-1, 2)
    for c in centers:
        if len(observed) and np.min(np.hypot(*(observed - c).T)) <= 1e-6:
            continue
        pts.append(c)
        src.append(OCCLUDED_GRID)
        ids.append(-1)
        seen.append(-1)
    return AnchorSet(
        np.array(pts, dtype=np.float64).reshape(-1, 2),
        np.array(src, dtype=np.int64),
        np.array(ids, dtype=np.int64),
        np.array(seen, dtype=np.int64),
    )


class GroundTruth(NamedTuple):
    agent_id: int
    cls: AgentClass
    pos: np.ndarray  # (2,)
    heading: np.ndarray  # (2,) unit (cos, sin)
    occluded: bool
    future: np.ndarray  # (N_FUT, 2)


def ground_truth_at_prediction_time(scene: Scene, mask: VisibilityMask) -> list:
    out = []
    for i, a in enumerate(scene.agents):
        st = a.states[PRED_INDEX]
        out.append(
            GroundTruth(
                a.id,
                a.cls,
                st[:2].copy(),
                st[2:].copy(),
                not bool(mask.agent_visible[i, PRED_INDEX]),
                a.states[PRED_INDEX + 1 :, :2].copy(),
            )
        )
    return out
