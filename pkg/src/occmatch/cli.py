"""Command-line entry point: gen, train, eval, demo, match.

Settings come from an optional JSON config file (``--config``) with the
sections ``generator``, ``train`` and ``eval``; explicit flags override the
file, which overrides built-in defaults. ``OCCMATCH_OUT_DIR`` overrides the
output directory of ``gen`` and ``demo``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

from .errors import InvalidConfig, IoError, OccmatchError
from .scene import GeneratorConfig

SWEEP_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)
CONFIG_SECTIONS = ("generator", "train", "eval")
EVAL_KEYS = {"thresholds", "ray_count"}


# --- config --------------------------------------------------------------


def load_run_config(path) -> dict:
    if path is None:
        return {s: {} for s in CONFIG_SECTIONS}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as e:
        raise IoError(f"{path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise InvalidConfig(f"{path}: {e}") from None
    unknown = set(data) - set(CONFIG_SECTIONS)
    if unknown:
        raise InvalidConfig(f"{path}: unknown config sections {sorted(unknown)}")
    from .model import TrainConfig

    allowed = {
        "generator": {f.name for f in fields(GeneratorConfig)},
        "train": {f.name for f in fields(TrainConfig)},
        "eval": EVAL_KEYS,
    }
    for section, keys in data.items():
        bad = set(keys) - allowed[section]
        if bad:
            raise InvalidConfig(f"{path}: unknown keys in [{section}]: {sorted(bad)}")
    return {s: dict(data.get(s, {})) for s in CONFIG_SECTIONS}


def _merge(base: dict, **flags) -> dict:
    out = dict(base)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _out_dir(arg) -> Path:
    env = os.environ.get("OCCMATCH_OUT_DIR")
    return Path(env) if env else Path(arg)


def _write(path: Path, data) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, bytes):
            path.write_bytes(data)
        else:
            path.write_text(data)
    except OSError as e:
        raise IoError(f"{path}: {e.strerror}") from None


def _scene_files(scenes_dir) -> list:
    root = Path(scenes_dir)
    if not root.is_dir():
        raise IoError(f"{root}: not a directory")
    files = sorted(p for p in root.rglob("*.json") if p.name != "manifest.json")
    if not files:
        raise IoError(f"{root}: no scene files")
    return files


def _load_scenes(scenes_dir) -> list:
    from .scene import load_scene

    out = []
    for f in _scene_files(scenes_dir):
        try:
            out.append(load_scene(f))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, OccmatchError):
                raise
            raise InvalidConfig(f"{f}: malformed scene ({e})") from None
    return out


def _pool_map(fn, items, jobs: int):
    """Ordered map; results come back in input order for any job count."""
    if jobs < 1:
        raise InvalidConfig("--jobs must be >= 1")
    if jobs == 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# --- gen -----------------------------------------------------------------


def _gen_one(args):
    from .scene import dumps_scene, generate_scene

    params, seed = args
    return dumps_scene(generate_scene(GeneratorConfig(**params), seed))


def _gen_level(out: Path, params: dict, count: int, seed: int, jobs: int) -> dict:
    texts = _pool_map(_gen_one, [(params, seed + i) for i in range(count)], jobs)
    entries = []
    for i, text in enumerate(texts):
        name = f"scene_{i:05d}.json"
        _write(out / name, text)
        entries.append({"file": name, "seed": seed + i, "sha256": hashlib.sha256(text.encode()).hexdigest()})
    manifest = {"format": 1, "count": count, "base_seed": seed, "generator": params, "scenes": entries}
    _write(out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def cmd_gen(args) -> int:
    cfg = load_run_config(args.config)
    params = _merge(cfg["generator"], occlusion_level=args.occlusion_level)
    out = _out_dir(args.out_dir)
    if args.count < 0:
        raise InvalidConfig("count must be >= 0")
    if args.sweep:
        for level in SWEEP_LEVELS:
            p = {**params, "occlusion_level": level}
            GeneratorConfig(**p).validate()
            _gen_level(out / f"level_{level:g}", p, args.count, args.seed, args.jobs)
    else:
        GeneratorConfig(**params).validate()
        _gen_level(out, params, args.count, args.seed, args.jobs)
    print(json.dumps({"out_dir": str(out), "count": args.count, "sweep": bool(args.sweep)}))
    return 0


# --- train ---------------------------------------------------------------

REGIME_CHOICES = ("hungarian", "hungarian-no-traj", "exact-ce")


def cmd_train(args) -> int:
    from .model import TrainConfig, save_weights, train, training_log_lines

    cfg = load_run_config(args.config)
    params = _merge(
        cfg["train"], epochs=args.epochs, seed=args.seed, learning_rate=args.lr,
        batch_size=args.batch_size, regime=args.regime, M=args.modes,
    )
    if "weights" in params:
        params["weights"] = tuple(params["weights"])
    config = TrainConfig(**params)
    config.validate()
    scenes = _load_scenes(args.scenes_dir)
    probe = _load_scenes(args.probe_dir) if args.probe_dir else None
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.jsonl")
    weights, history = train(scenes, config, probe=probe)
    save_weights_path = Path(args.out)
    try:
        save_weights_path.parent.mkdir(parents=True, exist_ok=True)
        save_weights(weights, save_weights_path)
    except OSError as e:
        raise IoError(f"{save_weights_path}: {e.strerror}") from None
    _write(log_path, "".join(line + "\n" for line in training_log_lines(history)))
    last = history[-1].total if history else None
    print(json.dumps({"weights": str(save_weights_path), "log": str(log_path), "epochs": len(history), "final_total": last}))
    return 0


# --- eval ----------------------------------------------------------------


def _parse_thresholds(text):
    if text is None:
        return None
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InvalidConfig(f"bad threshold list {text!r}") from None


_PREDICTOR_CACHE: dict = {}


def _eval_one(job):
    """Evaluate one scene; runs in worker processes when --jobs > 1."""
    from .experiment import empty_predictor, model_predictor, oracle_predictor
    from .metrics import evaluate_scene
    from .model import load_weights

    stub, weights_path, ray_count, scene, thresholds = job
    key = (stub, weights_path, ray_count)
    if key not in _PREDICTOR_CACHE:
        if stub == "oracle":
            _PREDICTOR_CACHE[key] = oracle_predictor(ray_count)
        elif stub == "empty":
            _PREDICTOR_CACHE[key] = empty_predictor(ray_count)
        else:
            _PREDICTOR_CACHE[key] = model_predictor(load_weights(weights_path), ray_count)
    return evaluate_scene(_PREDICTOR_CACHE[key](scene), thresholds)


def cmd_eval(args) -> int:
    from .experiment import summarize_by_level
    from .metrics import DEFAULT_THRESHOLDS, format_report
    from .model import load_weights

    cfg = load_run_config(args.config)
    ev = _merge(cfg["eval"], thresholds=_parse_thresholds(args.thresholds))
    thresholds = tuple(ev.get("thresholds", DEFAULT_THRESHOLDS))
    if list(thresholds) != sorted(thresholds) or any(t < 0 for t in thresholds):
        raise InvalidConfig("thresholds must be non-negative and ascending")
    ray_count = int(ev.get("ray_count", 720))
    if args.stub is None:
        if not args.weights:
            raise InvalidConfig("--weights is required unless --stub is given")
        try:
            load_weights(args.weights)
        except OSError as e:
            raise IoError(f"{args.weights}: {e.strerror}") from None
    scenes = _load_scenes(args.scenes_dir)
    jobs = [(args.stub, args.weights, ray_count, s, thresholds) for s in scenes]
    evals = _pool_map(_eval_one, jobs, args.jobs)
    rows = summarize_by_level([s.occlusion_level for s in scenes], evals, thresholds)
    text = format_report(rows, thresholds)
    if args.out:
        _write(Path(args.out), text)
    sys.stdout.write(text)
    return 0


# --- demo ----------------------------------------------------------------


def cmd_demo(args) -> int:
    from . import plots

    out = _out_dir(args.out_dir)
    if args.which == "cost-flip":
        from .assign import cost_flip_demo

        result = cost_flip_demo()
        _write(out / "cost_flip.json", json.dumps(result, indent=1, sort_keys=True) + "\n")
        _write(out / "cost_flip.svg", plots.cost_flip_svg(result))
        for s in result["settings"]:
            print(f"lambda_class={s['lambda_class']:g} matched={s['matched']} costs={json.dumps(s['costs'], sort_keys=True)}")
    elif args.which == "loss-cases":
        from .loss import loss_case_study

        report = loss_case_study()
        _write(out / "loss_cases.json", json.dumps(report, indent=1, sort_keys=True) + "\n")
        _write(out / "loss_cases.svg", plots.loss_cases_svg(report))
        for c in report["cases"]:
            print(f"{c['case']}: with={c['with_matching_loss']:.6f} without={c['without_matching_loss']:.6f}")
        print("checks: " + ", ".join(f"{k}={v}" for k, v in report["checks"].items()))
    else:
        from .scene import build_anchors, compute_visibility, load_scene

        if not args.scene:
            raise InvalidConfig("scene-render needs --scene")
        scene = load_scene(args.scene)
        mask = compute_visibility(scene)
        occupancy = trajectories = None
        anchors = build_anchors(scene, mask).points
        if args.weights:
            from .model import load_weights, predict

            sp = predict(load_weights(args.weights), scene)
            occupancy = 1.0 - sp.class_probs[:, 3]
            trajectories = sp.global_modes
        _write(out / "scene.svg", plots.scene_svg(scene, mask, anchors, occupancy, trajectories))
        print(json.dumps({"svg": str(out / "scene.svg"), "anchors": int(len(anchors))}))
    return 0


# --- match ---------------------------------------------------------------


def cmd_match(args) -> int:
    from .assign import NO_OBJECT, hungarian_solve, load_cost_csv

    try:
        cost = load_cost_csv(args.cost_file)
    except OSError as e:
        raise IoError(f"{args.cost_file}: {e.strerror}") from None
    a = hungarian_solve(cost)
    result = {
        "pairs": [{"prediction": n, "gt": g} for n, g in a.pairs()],
        "no_object": [int(n) for n in range(len(a.sigma)) if a.sigma[n] == NO_OBJECT],
        "total_cost": a.total_cost,
    }
    print(json.dumps(result, sort_keys=True))
    return 0


# --- main ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="occmatch", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate synthetic scenes")
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--occlusion-level", type=float)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-dir", default="scenes")
    g.add_argument("--sweep", action="store_true", help="one subdirectory per occlusion level 0..1")
    g.add_argument("--jobs", type=int, default=1)
    g.add_argument("--config")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train the prediction heads")
    t.add_argument("--scenes-dir", required=True)
    t.add_argument("--regime", choices=REGIME_CHOICES)
    t.add_argument("--out", required=True, help="weights file")
    t.add_argument("--log", help="epoch log (JSON lines); default <out>.log.jsonl")
    t.add_argument("--probe-dir", help="held-out scenes for the redundancy ratio")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--modes", type=int)
    t.add_argument("--config")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a model on scenes")
    e.add_argument("--weights")
    e.add_argument("--scenes-dir", required=True)
    e.add_argument("--thresholds", help="comma-separated meters, ascending")
    e.add_argument("--out", help="CSV report path")
    e.add_argument("--stub", choices=("oracle", "empty"), help="replace the model by a test predictor")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--config")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("demo", help="figure-style demonstrations")
    d.add_argument("which", choices=("cost-flip", "loss-cases", "scene-render"))
    d.add_argument("--out-dir", default="demo")
    d.add_argument("--scene")
    d.add_argument("--weights")
    d.set_defaults(func=cmd_demo)

    m = sub.add_parser("match", help="solve an assignment from a CSV cost matrix")
    m.add_argument("cost_file")
    m.set_defaults(func=cmd_match)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OccmatchError, ValueError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: IoError: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
