"""2D poses, heading vectors, rotations and ray/segment intersection."""

from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np

HEADING_EPS = 1e-12
GRAD_CLIP_NORM = 1e-6


class DegenerateHeading(ValueError):
    """Raised when a heading cannot be normalized (both components ~0)."""


class Point2(NamedTuple):
    x: float
    y: float


class HeadingVec(NamedTuple):
    c: float
    s: float

    @classmethod
    def from_angle(cls, theta: float) -> "HeadingVec":
        return cls(math.cos(theta), math.sin(theta))

    @property
    def angle(self) -> float:
        return math.atan2(self.s, self.c)


class Segment2(NamedTuple):
    a: Point2
    b: Point2


def normalize_heading(raw_c: float, raw_s: float) -> HeadingVec:
    """Project a raw (cos, sin) head output onto the unit circle."""
    norm = math.hypot(raw_c, raw_s)
    if not norm > HEADING_EPS:
        raise DegenerateHeading(f"cannot normalize heading ({raw_c!r}, {raw_s!r})")
    return HeadingVec(raw_c / norm, raw_s / norm)


def rotate_local_to_global(d_local: Point2, h: HeadingVec) -> Point2:
    dx, dy = d_local
    return Point2(h.c * dx - h.s * dy, h.s * dx + h.c * dy)


def heading_cosine_gap(a: HeadingVec, b: HeadingVec) -> float:
    """1 - a.b, clipped to [0, 2] against round-off."""
    gap = 1.0 - (a.c * b.c + a.s * b.s)
    return min(max(gap, 0.0), 2.0)


def _cross(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * by - ay * bx


def ray_segment_intersect(
    origin: Point2, direction: HeadingVec, seg: Segment2, eps: float = 1e-12
) -> Optional[float]:
    """Distance along the ray to the first point of ``seg``, or None.

    A colinear overlap reports the nearest point of the overlap, which is 0
    when the origin itself lies on the segment.
    """
    ox, oy = origin
    dx, dy = direction
    ax, ay = seg.a
    ex, ey = seg.b[0] - ax, seg.b[1] - ay
    wx, wy = ax - ox, ay - oy
    denom = _cross(dx, dy, ex, ey)
    scale = math.hypot(ex, ey)
    if abs(denom) <= eps * max(scale, 1.0):
        if abs(_cross(wx, wy, dx, dy)) > eps * max(math.hypot(wx, wy), 1.0):
            return None
        ta = wx * dx + wy * dy
        tb = (seg.b[0] - ox) * dx + (seg.b[1] - oy) * dy
        lo, hi = min(ta, tb), max(ta, tb)
        if hi < 0.0:
            return None
        return max(lo, 0.0)
    t = _cross(wx, wy, ex, ey) / denom
    u = _cross(wx, wy, dx, dy) / denom
    if t < 0.0 or u < -eps or u > 1.0 + eps:
        return None
    return t


# --- vectorized helpers used by scene/loss/model -------------------------


def rotation_matrix(c: float, s: float) -> np.ndarray:
    return np.array([[c, -s], [s, c]])


def rotate_many(d_local: np.ndarray, c, s) -> np.ndarray:
    """Rotate (..., 2) local displacements by heading(s) (c, s).

    ``c`` and ``s`` broadcast against the leading dimensions of ``d_local``.
    """
    c = np.asarray(c, dtype=np.float64)[..., None]
    s = np.asarray(s, dtype=np.float64)[..., None]
    x = d_local[..., 0:1]
    y = d_local[..., 1:2]
    return np.concatenate([c * x - s * y, s * x + c * y], axis=-1)


def safe_normalize(raw: np.ndarray, clip: float = GRAD_CLIP_NORM) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise normalization of (n, 2) raw headings.

    Rows shorter than ``clip`` are divided by ``clip`` instead of their own
    norm, which keeps the Jacobian bounded near the origin. Returns the
    normalized rows and the divisor used per row.
    """
    norm = np.maximum(np.linalg.norm(raw, axis=-1), clip)
    return raw / norm[..., None], norm


def normalize_backward(raw: np.ndarray, grad_u: np.ndarray, clip: float = GRAD_CLIP_NORM) -> np.ndarray:
    """Pull a gradient w.r.t. normalized headings back to the raw outputs."""
    u, norm = safe_normalize(raw, clip)
    rnorm = np.linalg.norm(raw, axis=-1)
    radial = np.sum(u * grad_u, axis=-1, keepdims=True)
    out = np.where(
        (rnorm >= clip)[..., None],
        (grad_u - radial * u) / norm[..., None],
        grad_u / clip,
    )
    return out
