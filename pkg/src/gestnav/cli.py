"""Single entry binary: scene/gesture generation, training, evaluation,
replay, and the live-steering server.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error. The
GESTNAV_SEED environment variable overrides the config seed; an explicit
--seed flag overrides both.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import sys
import time
import uuid
from pathlib import Path

import numpy as np

from . import evalkit, gesturesynth, ppotrain, scenegen
from . import policy as po
from .ppotrain import TrainConfig
from .scenegen import SceneGenParams

SPLIT_SEEDS = {"train": range(0, 20), "val": range(100, 105), "test": range(200, 205)}


class ConfigError(Exception):
    pass


_SCHEMA = {
    "scene": {"min_size_m": float, "max_size_m": float, "min_objects": int,
              "max_objects": int, "max_wall_stubs": int, "train_scenes": int,
              "val_scenes": int, "test_scenes": int, "types": str},
    "gesture": {"anatomy_seed": int, "noise_sigma": float},
    "model": {"hidden": int, "embed_dim": int, "rays": int, "categories": int},
    "ppo": {"horizon": int, "num_envs": int, "minibatch": int, "epochs": int,
            "lr": float, "gamma": float, "gae_lambda": float, "clip_eps": float,
            "value_coef": float, "entropy_coef": float, "grad_clip_norm": float,
            "total_env_steps": int, "seed": int},
    "eval": {"episodes_per_scene": int, "budgets": str, "seed": int},
}

_DEFAULTS = {
    "scene": {"min_size_m": 4.0, "max_size_m": 8.0, "min_objects": 4,
              "max_objects": 12, "max_wall_stubs": 3, "train_scenes": 20,
              "val_scenes": 5, "test_scenes": 5,
              "types": ",".join(scenegen.SCENE_TYPES)},
    "gesture": {"anatomy_seed": 0, "noise_sigma": 0.05},
    "model": {"hidden": 256, "embed_dim": 32, "rays": 32, "categories": 10},
    "ppo": {f: getattr(TrainConfig(), f) for f in
            ("horizon", "num_envs", "minibatch", "epochs", "lr", "gamma",
             "gae_lambda", "clip_eps", "value_coef", "entropy_coef",
             "grad_clip_norm", "total_env_steps", "seed")},
    "eval": {"episodes_per_scene": 250, "budgets": "1,2,3,inf", "seed": 0},
}


def load_config(path: str | None) -> dict:
    """Nested config as {section: {key: typed value}}; unknown keys are fatal."""
    cfg = {s: dict(v) for s, v in _DEFAULTS.items()}
    if path is None:
        return cfg
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            typ = _SCHEMA[section][key]
            try:
                cfg[section][key] = typ(raw)
            except ValueError as e:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from e
    if cfg["model"]["rays"] != 32 or cfg["model"]["categories"] != 10:
        raise ConfigError("model.rays and model.categories are fixed at 32 and 10")
    return cfg


def effective_seed(cfg: dict, flag_seed: int | None) -> int:
    if flag_seed is not None:
        return int(flag_seed)
    env = os.environ.get("GESTNAV_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as e:
            raise ConfigError(f"GESTNAV_SEED must be an integer, got {env!r}") from e
    return int(cfg["ppo"]["seed"])


def scene_params(cfg: dict) -> SceneGenParams:
    s = cfg["scene"]
    return SceneGenParams(s["min_size_m"], s["max_size_m"], s["min_objects"],
                          s["max_objects"], s["max_wall_stubs"])


def train_config(cfg: dict, seed: int) -> TrainConfig:
    p = dict(cfg["ppo"])
    p["seed"] = seed
    p["anatomy_seed"] = cfg["gesture"]["anatomy_seed"]
    p["noise_sigma"] = cfg["gesture"]["noise_sigma"]
    return TrainConfig(**p)


def parse_budgets(text: str):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        out.append(math.inf if tok in ("inf", "Inf", "INF") else int(tok))
    if not out:
        raise ConfigError("empty budget list")
    return tuple(out)


# ------------------------------------------------------------------ helpers

def load_split_scenes(scenes_dir: str, split: str | None = None) -> list:
    d = Path(scenes_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"scene directory not found: {scenes_dir}")
    files = sorted(d.glob("*.json"))
    if split:
        files = [f for f in files if f.name.startswith(split + "_")]
    scenes = [scenegen.load_scene(f) for f in files]
    if not scenes:
        raise FileNotFoundError(f"no scenes for split {split!r} in {scenes_dir}")
    return scenes


def scene_content_hash(scenes_dir: str, split: str | None = None) -> str:
    d = Path(scenes_dir)
    files = sorted(d.glob("*.json"))
    if split:
        files = [f for f in files if f.name.startswith(split + "_")]
    h = hashlib.sha256()
    for f in files:
        h.update(f.name.encode())
        h.update(hashlib.sha256(f.read_bytes()).digest())
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, cfg: dict, seed: int,
                   scene_hash: str, started: float, artifacts: dict) -> Path:
    manifest = {
        "run_id": uuid.uuid4().hex,
        "command": command,
        "config": cfg,
        "seed": seed,
        "scene_hash": scene_hash,
        "started_at": started,
        "finished_at": time.time(),
        "artifacts": artifacts,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------- subcommands

def cmd_gen_scenes(args) -> int:
    cfg = load_config(args.config)
    params = scene_params(cfg)
    types = [t.strip() for t in (args.types or cfg["scene"]["types"]).split(",") if t.strip()]
    for t in types:
        if t not in scenegen.SCENE_TYPES:
            raise ConfigError(f"unknown scene type {t!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    counts = {"train": cfg["scene"]["train_scenes"], "val": cfg["scene"]["val_scenes"],
              "test": cfg["scene"]["test_scenes"]}
    n = 0
    for t in types:
        for split, seed_range in SPLIT_SEEDS.items():
            for seed in list(seed_range)[: counts[split]]:
                scene = scenegen.generate_scene(seed, t, params)
                scenegen.save_scene(scene, out / f"{split}_{scene.scene_id}.json")
                n += 1
    print(f"wrote {n} scenes to {out}", file=sys.stderr)
    return 0


def cmd_gen_gestures(args) -> int:
    cfg = load_config(args.config)
    anatomy = gesturesynth.GestureAnatomy(cfg["gesture"]["anatomy_seed"])
    sigma = cfg["gesture"]["noise_sigma"]
    rng = np.random.default_rng(effective_seed(cfg, args.seed))
    records = []
    for i in range(args.count):
        if args.kind in ("both", "referencing") and (args.kind == "referencing" or i % 2 == 0):
            bearing = float(rng.uniform(-np.pi, np.pi))
            seq = gesturesynth.referencing_gesture(bearing, anatomy,
                                                   int(rng.integers(2 ** 31)), sigma)
            records.append((seq, gesturesynth.KIND_REFERENCING, bearing, -1.0))
        else:
            idx = int(rng.integers(gesturesynth.NUM_TEMPLATES))
            seq = gesturesynth.intervention_gesture(idx, anatomy)
            records.append((seq, gesturesynth.KIND_INTERVENTION, 0.0, float(idx)))
    gesturesynth.write_gesture_dataset(args.out, records)
    print(f"wrote {len(records)} gestures to {args.out}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = effective_seed(cfg, args.seed)
    tc = train_config(cfg, seed)
    if args.total_steps is not None:
        tc.total_env_steps = args.total_steps
    scenes = load_split_scenes(args.scenes, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    snapshot = {"config": cfg, "condition": args.condition, "seed": seed}

    def log(row):
        print(json.dumps(row), file=sys.stderr)

    res = ppotrain.train(tc, scenes, args.condition, out, snapshot,
                         log=log if args.verbose else None)
    write_manifest(out, "train", cfg, seed,
                   scene_content_hash(args.scenes, args.split), started,
                   {"checkpoint": res.checkpoint_path, "metrics": res.metrics_path})
    print(f"trained {res.env_steps} steps in {res.wall_s/60:.1f} min, "
          f"rolling SR {res.rolling_sr:.3f}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    from . import simcore
    cfg = load_config(args.config)
    params, ckpt_cfg = po.load_checkpoint(args.checkpoint)
    condition = args.condition or ckpt_cfg.get("condition")
    if condition is None:
        raise ConfigError("no --condition given and checkpoint lacks one")
    if condition not in simcore.CONDITIONS:
        raise ConfigError(f"unknown condition {condition!r}")
    scenes = load_split_scenes(args.scenes, args.split)
    budgets = parse_budgets(args.budgets)
    seed = args.seed if args.seed is not None else cfg["eval"]["seed"]
    episodes = args.episodes or cfg["eval"]["episodes_per_scene"]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    started = time.time()
    sink = open(args.episode_logs, "w") if args.episode_logs else None
    try:
        report, _ = evalkit.evaluate_policy(
            params, scenes, condition, budgets, episodes, seed,
            cfg["gesture"]["anatomy_seed"], cfg["gesture"]["noise_sigma"],
            log_sink=sink,
            progress=(lambda m: print(m, file=sys.stderr)) if args.verbose else None)
    finally:
        if sink:
            sink.close()
    evalkit.write_report(report, out)
    artifacts = {"report": str(out)}
    if args.emit_csv:
        csv_path = out.with_suffix(".csv")
        evalkit.write_report_csv(report, csv_path)
        artifacts["csv"] = str(csv_path)
    if args.episode_logs:
        artifacts["episode_logs"] = args.episode_logs
    write_manifest(out.parent, "eval", cfg, seed,
                   scene_content_hash(args.scenes, args.split), started, artifacts)
    print(f"report written to {out}", file=sys.stderr)
    return 0


def cmd_replay(args) -> int:
    from . import simcore
    with open(args.log) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not 0 <= args.index < len(lines):
        raise ConfigError(f"--index {args.index} out of range ({len(lines)} episodes)")
    log = lines[args.index]
    scene = _find_scene(args.scenes, log["scene_id"])
    spec = spec_from_log(scene, log)
    env = simcore.NavEnv(scene)
    env.reset(spec, log["env_seed"])
    for a in log["actions"]:
        _, out = env.step(int(a))
    replayed = env.rewards
    recorded = [float(r) for r in log["rewards"]]
    if replayed != recorded:
        bad = next(i for i, (a, b) in enumerate(zip(replayed, recorded)) if a != b)
        print(f"replay mismatch at step {bad}: {replayed[bad]} != {recorded[bad]}",
              file=sys.stderr)
        return 1
    text = render_trajectory_text(scene, env, spec)
    if args.out:
        if str(args.out).endswith(".png"):
            render_trajectory_png(scene, env, spec, args.out)
        else:
            Path(args.out).write_text(text)
    else:
        print(text)
    print(f"replay ok: {len(replayed)} steps, success={env.success}, "
          f"rewards match exactly", file=sys.stderr)
    return 0


def _find_scene(scenes_dir: str, scene_id: str):
    for f in sorted(Path(scenes_dir).glob("*.json")):
        scene = scenegen.load_scene(f)
        if scene.scene_id == scene_id:
            return scene
    raise FileNotFoundError(f"scene {scene_id} not found in {scenes_dir}")


def spec_from_log(scene, log: dict):
    """Rebuild the EpisodeSpec a log was produced from (seeds included)."""
    from . import simcore
    x, y, heading = log["start_pose"]
    start = simcore.Pose(float(x), float(y), int(heading))
    instance = scene.instance(int(log["target_instance"]))
    ax, ay = instance.anchor
    bearing = simcore.wrap_pi(math.atan2(ay - y, ax - x) - start.angle())
    anatomy = gesturesynth.GestureAnatomy(int(log["anatomy_seed"]))
    ref = gesturesynth.referencing_gesture(bearing, anatomy, int(log["style_seed"]),
                                           float(log["noise_sigma"]))
    return simcore.EpisodeSpec(scene.scene_id, start, int(log["target_category"]),
                               int(log["target_instance"]), log["condition"], ref,
                               simcore.MAX_STEPS, int(log["anatomy_seed"]),
                               int(log["style_seed"]), float(log["noise_sigma"]))


def render_trajectory_text(scene, env, spec) -> str:
    rows = []
    visited = {}
    for i, (x, y, _) in enumerate(env.trajectory):
        visited[scenegen.point_cell(x, y)] = i
    target = scene.instance(spec.target_instance)
    for iy in range(scene.ny - 1, -1, -1):
        row = []
        for ix in range(scene.nx):
            cell = (ix, iy)
            cat = scene.cell_category(ix, iy)
            if cell == scenegen.point_cell(*env.trajectory[0][:2]):
                row.append("S")
            elif cell == scenegen.point_cell(env.pose.x, env.pose.y):
                row.append("E")
            elif cell in visited:
                row.append("*")
            elif cat is not None:
                row.append("T" if cell in target.footprint else str(cat))
            elif scene.grid[iy, ix] == scenegen.BLOCKED:
                row.append("#")
            else:
                row.append(".")
        rows.append("".join(row))
    legend = (f"scene {scene.scene_id}  target cat {spec.target_category} "
              f"instance {spec.target_instance}  success={env.success} "
              f"steps={env.steps} p={env.p_len_m:.2f}m l={env.l_len_m:.2f}m")
    return "\n".join(rows) + "\n" + legend + "\n"


def render_trajectory_png(scene, env, spec, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 6 * scene.ny / scene.nx))
    ax.imshow(scene.grid, origin="lower", cmap="Greys",
              extent=[0, scene.width_m, 0, scene.height_m], alpha=0.6)
    cmap = plt.get_cmap("tab10")
    for o in scene.objects:
        xs = [c[0] * 0.25 + 0.125 for c in o.footprint]
        ys = [c[1] * 0.25 + 0.125 for c in o.footprint]
        marker = "*" if o.instance_id == spec.target_instance else "s"
        ax.scatter(xs, ys, c=[cmap(o.category)], s=90, marker=marker)
    xs = [p[0] for p in env.trajectory]
    ys = [p[1] for p in env.trajectory]
    ax.plot(xs, ys, "b.-", lw=1, ms=3)
    ax.plot(xs[0], ys[0], "g^", ms=10)
    ax.plot(xs[-1], ys[-1], "rv", ms=10)
    ax.set_title(f"{scene.scene_id} success={env.success}")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def cmd_serve(args) -> int:
    from . import gateway
    cfg = load_config(args.config)
    scenes = load_split_scenes(args.scenes, args.split)
    return gateway.serve(args.checkpoint, scenes, args.port, host=args.host,
                         pace=args.pace, ui_dir=args.ui_dir,
                         anatomy_seed=cfg["gesture"]["anatomy_seed"],
                         noise_sigma=cfg["gesture"]["noise_sigma"])


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gestnav",
                                description="gesture-guided object navigation")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-scenes", help="generate scene files")
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--types")
    g.set_defaults(fn=cmd_gen_scenes)

    g = sub.add_parser("gen-gestures", help="write a labeled gesture dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--count", type=int, default=200)
    g.add_argument("--kind", choices=("both", "referencing", "intervention"),
                   default="both")
    g.add_argument("--seed", type=int)
    g.set_defaults(fn=cmd_gen_gestures)

    g = sub.add_parser("train", help="train one condition")
    g.add_argument("--config")
    g.add_argument("--condition", required=True,
                   choices=("baseline", "referencing", "intervention"))
    g.add_argument("--scenes", required=True)
    g.add_argument("--split", default="train")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--total-steps", type=int, dest="total_steps")
    g.add_argument("--verbose", action="store_true")
    g.set_defaults(fn=cmd_train)

    g = sub.add_parser("eval", help="evaluate a checkpoint")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--scenes", required=True)
    g.add_argument("--split", default="test")
    g.add_argument("--condition")
    g.add_argument("--budgets", default="1,2,3,inf")
    g.add_argument("--episodes", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--emit-csv", action="store_true", dest="emit_csv")
    g.add_argument("--episode-logs", dest="episode_logs")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--verbose", action="store_true")
    g.set_defaults(fn=cmd_eval)

    g = sub.add_parser("replay", help="re-simulate and render a logged episode")
    g.add_argument("--log", required=True)
    g.add_argument("--scenes", required=True)
    g.add_argument("--index", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(fn=cmd_replay)

    g = sub.add_parser("serve", help="run the live steering gateway")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--scenes", required=True)
    g.add_argument("--split", default="test")
    g.add_argument("--port", type=int, default=8765)
    g.add_argument("--host", default="127.0.0.1")
    g.add_argument("--pace", type=float, default=4.0)
    g.add_argument("--ui-dir", dest="ui_dir")
    g.add_argument("--config")
    g.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
