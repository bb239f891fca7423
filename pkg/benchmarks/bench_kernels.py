"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Inputs are drawn at the sizes the package actually uses: cost matrices of a
few agents against a few hundred anchors, 720-ray casts against the edges of
a typical scene, and the cell-window test over a 40 x 40 grid.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from occmatch.kernels import get_backend


def inputs(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-30, 30, (15, 2))
    edges = []
    for cx, cy in centers:
        corners = np.array([[-2, -1], [2, -1], [2, 1], [-2, 1]], float) + (cx, cy)
        edges += [np.r_[corners[i], corners[(i + 1) % 4]] for i in range(4)]
    edges = np.ascontiguousarray(edges)
    n_rays = 720
    xs = np.arange(-29.25, 30, 1.5)
    gx, gy = np.meshgrid(xs, xs)
    cells = np.c_[gx.ravel(), gy.ravel()]
    ang = np.arctan2(cells[:, 1], cells[:, 0]) % (2 * np.pi)
    k = np.floor(ang / (2 * np.pi) * n_rays).astype(np.int64)
    return {
        "lap_small": np.ascontiguousarray(rng.uniform(-5, 5, (6, 8))),
        "lap_scene": np.ascontiguousarray(rng.uniform(0, 40, (15, 400))),
        "edges": edges,
        "n_rays": n_rays,
        "k_lo": k - 2,
        "k_hi": k + 2,
        "dist": np.linalg.norm(cells, axis=1),
    }


def bench(backend, data, repeat: int) -> dict:
    hits = backend.ray_hits(0.0, 0.0, data["n_rays"], data["edges"])
    cases = {
        "lap_solve 6x8": lambda: backend.lap_solve(data["lap_small"]),
        "lap_solve 15x400": lambda: backend.lap_solve(data["lap_scene"]),
        "ray_hits 720 rays x 60 edges": lambda: backend.ray_hits(0.0, 0.0, data["n_rays"], data["edges"]),
        "window_reaches 1600 cells": lambda: backend.window_reaches(hits, data["k_lo"], data["k_hi"], data["dist"], 1e-9),
    }
    out = {}
    for name, fn in cases.items():
        number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
        out[name] = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
    return out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    data = inputs()
    py = bench(get_backend("python"), data, args.repeat)
    try:
        cy = bench(get_backend("cython"), data, args.repeat)
    except ImportError:
        cy = None
        print("compiled extension not built; showing the fallback only")
    print(f"{'kernel':32s} {'python (us)':>12s} {'cython (us)':>12s} {'speedup':>8s}")
    for name, t in py.items():
        if cy is None:
            print(f"{name:32s} {t * 1e6:12.1f}")
        else:
            print(f"{name:32s} {t * 1e6:12.1f} {cy[name] * 1e6:12.1f} {t / cy[name]:8.1f}x")


if __name__ == "__main__":
    main()
