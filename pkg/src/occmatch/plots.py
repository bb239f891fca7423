"""SVG figures: loss-case bar chart, cost-flip diagram and scene render.

SVG output is byte-deterministic: fixed hash salt, no date metadata.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import LinearSegmentedColormap  # noqa: E402
from matplotlib.patches import Polygon, Rectangle  # noqa: E402

from .scene import PRED_INDEX  # noqa: E402

OCCUPANCY_CMAP = LinearSegmentedColormap.from_list("occupancy", ["#ffffff", "#8b0000"])


def _svg_bytes(fig) -> bytes:
    buf = io.BytesIO()
    with plt.rc_context({"svg.hashsalt": "occmatch", "svg.fonttype": "none"}):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def loss_cases_svg(report: dict) -> bytes:
    cases = report["cases"]
    labels = [c["case"].replace("_", "\n") for c in cases]
    without = [c["without_matching_loss"] for c in cases]
    with_ = [c["with_matching_loss"] for c in cases]
    x = np.arange(len(cases))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(x - 0.2, without, 0.4, label="exact-cell targets", color="#999999")
    ax.bar(x + 0.2, with_, 0.4, label="assignment targets", color="#1f77b4")
    ax.set_xticks(x, labels)
    ax.set_ylabel("weighted cross-entropy")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    fig.tight_layout()
    return _svg_bytes(fig)


def cost_flip_svg(result: dict) -> bytes:
    fig, axes = plt.subplots(1, len(result["settings"]), figsize=(3.2 * len(result["settings"]), 3.2))
    axes = np.atleast_1d(axes)
    gt = result["gt"]
    for ax, setting in zip(axes, result["settings"]):
        ax.add_patch(Rectangle((gt[0] - 2.25, gt[1] - 0.9), 4.5, 1.8, fc="#c6dbef", ec="#08519c"))
        for cand in result["candidates"]:
            p = cand["position"]
            matched = cand["name"] == setting["matched"]
            ax.scatter([p[0]], [p[1]], s=200, c=[OCCUPANCY_CMAP(cand["car_prob"])],
                       edgecolors="green" if matched else "black", linewidths=3 if matched else 1, zorder=3)
            ax.annotate(f"{setting['costs'][cand['name']]:.2f}", (p[0] + 0.4, p[1]), fontsize=9)
        ax.set_title(f"λ_class = {setting['lambda_class']:g}")
        ax.set_xlim(-4, 4)
        ax.set_ylim(-3, 4)
        ax.set_aspect("equal")
    fig.tight_layout()
    return _svg_bytes(fig)


def scene_svg(scene, mask, anchors=None, occupancy=None, trajectories=None) -> bytes:
    """Scene with occluded cells shaded, anchors colored by occupancy
    probability and the trajectories of anchors above 0.5."""
    grid = mask.grid
    fig, ax = plt.subplots(figsize=(6, 6))
    extent = (grid.xmin, grid.xmin + grid.nx * grid.res, grid.ymin, grid.ymin + grid.ny * grid.res)
    ax.imshow(~mask.cells[PRED_INDEX], origin="lower", extent=extent, cmap="Greys", vmin=0, vmax=3, interpolation="nearest")
    for seg in scene.static_obstacles:
        ax.plot([seg.a[0], seg.b[0]], [seg.a[1], seg.b[1]], color="black", lw=1.5)
    for agent in scene.agents:
        corners = agent.footprint_edges(PRED_INDEX)[:, :2]
        ax.add_patch(Polygon(corners, closed=True, fc="#74c476" if agent.occluder else "none", ec="#006d2c", lw=1))
    if anchors is not None:
        occ = np.zeros(len(anchors)) if occupancy is None else occupancy
        ax.scatter(anchors[:, 0], anchors[:, 1], c=occ, cmap=OCCUPANCY_CMAP, vmin=0, vmax=1, s=12, edgecolors="#555555", linewidths=0.3)
        if trajectories is not None:
            for k in np.nonzero(occ > 0.5)[0]:
                for mode in trajectories[k]:
                    ax.plot(mode[:, 0], mode[:, 1], color="#3182bd", lw=0.6)
    ax.plot([scene.ego[0]], [scene.ego[1]], marker="^", color="orange", markersize=10)
    ax.set_xlim(extent[0], extent[1])
    ax.set_ylim(extent[2], extent[3])
    ax.set_aspect("equal")
    fig.tight_layout()
    return _svg_bytes(fig)
