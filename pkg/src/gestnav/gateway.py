"""Live-steering service: runs a loaded policy in real time over a websocket,
accepts human gesture commands, and streams world state to the browser UI.

Protocol (JSON text frames on /ws):
  client -> server:
    {"type": "reset"} | {"type": "pause"} | {"type": "resume"}
    {"type": "point", "bearing_deg": real}      world frame, east = 0, CCW
    {"type": "intervene"}
    {"type": "set_pace", "sps": real}
  server -> client:
    {"type": "state_update", "seq", "pose", "trajectory", "rays", "objects",
     "target", "gesture_kind", "last_reward", "episode", "tallies", ...}
    {"type": "error", "code"}

Commands are queued and applied only at step boundaries. Each websocket
connection owns one fully isolated session; with no client connected nothing
steps. Human-issued gestures override the episode's scripted condition while
active: a point installs a fresh referencing sequence for the rest of the
episode, an intervene occupies the channel for the next 5 steps (restartable)
and then reverts to condition rules.
"""
from __future__ import annotations

import asyncio
import itertools
import json
import math
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket
from fastapi.responses import HTMLResponse
from starlette.websockets import WebSocketDisconnect

from . import evalkit, gesturesynth, simcore
from . import policy as po
from .evalkit import EpisodeRecord
from .simcore import NavEnv, Pose, sample_episode

INTERVENE_WINDOW = 5
DEFAULT_PACE = 4.0


class BindError(Exception):
    pass


class _Tick:
    pass


_TICK = _Tick()


class Session:
    """One live episode stream: policy, env, tallies, pending human command."""

    def __init__(self, ctx: dict, session_id: int):
        self.ctx = ctx
        self.session_id = session_id
        self.params = ctx["params"]
        self.scenes = ctx["scenes"]
        self.condition = ctx["condition"]
        self.anatomy_seed = ctx["anatomy_seed"]
        self.noise_sigma = ctx["noise_sigma"]
        self.rng_ep = np.random.default_rng([ctx["seed"], session_id, 4])
        self.rng_act = np.random.default_rng([ctx["seed"], session_id, 5])
        self.pace = float(ctx["pace"])
        self.paused = False
        self.seq = 0
        self.env: NavEnv | None = None
        self.obs = None
        self.hidden = None
        self.episode_count = 0
        self.records: list[EpisodeRecord] = []
        self.last_reward = 0.0
        self.last_kind = "none"
        self.injected: dict | None = None
        self.forced_ref = False
        self.int_left = 0
        self.int_array = None

    # ------------------------------------------------------------- lifecycle

    def has_active_episode(self) -> bool:
        return self.env is not None and not self.env.done

    def can_step(self) -> bool:
        return self.has_active_episode() and not self.paused

    def step_interval(self) -> float:
        return 1.0 / self.pace

    def reset_episode(self) -> dict:
        scene = self.scenes[self.episode_count % len(self.scenes)]
        self.episode_count += 1
        spec = sample_episode(scene, self.condition, self.rng_ep,
                              self.anatomy_seed, self.noise_sigma)
        env_seed = int(self.rng_ep.integers(2 ** 31))
        self.env = NavEnv(scene)
        self.obs = self.env.reset(spec, env_seed)
        self.hidden = po.initial_hidden(self.params)
        self.last_reward = 0.0
        self.last_kind = self.env.last_gesture_kind
        self.injected = None
        self.forced_ref = False
        self.int_left = 0
        self.int_array = None
        return self.state_frame()

    # -------------------------------------------------------------- commands

    def point(self, bearing_deg: float):
        """Install a referencing gesture toward a world-frame bearing.

        The synth's bearing is expressed in the frame of a human standing at
        the episode start pose sharing its heading, so convert before
        synthesizing.
        """
        env = self.env
        bearing_world = math.radians(float(bearing_deg))
        human_frame = simcore.wrap_pi(bearing_world - env.spec.start.angle())
        style_seed = int(self.rng_ep.integers(2 ** 31))
        anatomy = gesturesynth.GestureAnatomy(self.anatomy_seed)
        seq = gesturesynth.referencing_gesture(human_frame, anatomy, style_seed,
                                               self.noise_sigma)
        env.spec.referencing_gesture = seq
        self.forced_ref = True
        self.injected = {"kind": "referencing",
                         "bearing_deg": math.degrees(simcore.wrap_pi(bearing_world)),
                         "style_seed": style_seed}

    def intervene(self):
        idx = int(self.rng_ep.integers(gesturesynth.NUM_TEMPLATES))
        self.int_array = simcore.intervention_template(self.anatomy_seed, idx)
        self.int_left = INTERVENE_WINDOW
        self.injected = {"kind": "intervention", "template_index": idx,
                         "steps_left": self.int_left}

    def _channel_override(self, scripted_kind: str):
        """Gesture actually on the channel for the next action.

        Human intervention wins, then the condition's own intervention rule,
        then a human-installed referencing sequence, then the scripted
        delivery untouched.
        """
        if self.int_left > 0:
            return self.int_array, "intervention"
        if scripted_kind == "intervention":
            return None, scripted_kind
        if self.forced_ref:
            return self.env.spec.referencing_gesture, "referencing"
        return None, scripted_kind

    # ------------------------------------------------------------- stepping

    def step_once(self) -> dict:
        env = self.env
        obs = self.obs
        override, kind = self._channel_override(env.last_gesture_kind)
        if override is not None:
            obs = replace(obs, gesture=override)
        action, _, _, self.hidden = po.act(obs, self.hidden, self.params,
                                           self.rng_act)
        self.obs, out = env.step(action)
        if self.int_left > 0:
            self.int_left -= 1
            if self.injected and self.injected.get("kind") == "intervention":
                self.injected["steps_left"] = self.int_left
        self.last_reward = out.reward
        self.last_kind = kind
        if out.done:
            self.records.append(EpisodeRecord(
                success=env.success, p_len_m=env.p_len_m, l_len_m=env.l_len_m,
                stops_used=env.stops, steps=env.steps,
                scene_type=env.scene.scene_type, condition=env.spec.condition))
        return self.state_frame()

    # --------------------------------------------------------------- frames

    def tallies(self) -> dict:
        if not self.records:
            return {"sr": 0.0, "spl": 0.0, "n": 0}
        return {"sr": evalkit.success_rate(self.records),
                "spl": evalkit.spl(self.records), "n": len(self.records)}

    def state_frame(self) -> dict:
        env = self.env
        self.seq += 1
        scene = env.scene
        rays = [[float(r[0]), int(np.argmax(r[1:])) if r[1:].any() else -1]
                for r in self.obs.vision]
        return {
            "type": "state_update",
            "seq": self.seq,
            "pose": {"x": env.pose.x, "y": env.pose.y,
                     "heading_deg": env.pose.heading * 15.0},
            "trajectory": [[x, y, h * 15.0] for x, y, h in env.trajectory],
            "rays": rays,
            "objects": [{"instance": o.instance_id, "category": o.category,
                         "anchor": [o.anchor[0], o.anchor[1]],
                         "footprint": [list(c) for c in o.footprint]}
                        for o in scene.objects],
            "target": {"category": env.spec.target_category,
                       "instance": env.spec.target_instance},
            "gesture_kind": self.last_kind,
            "last_reward": self.last_reward,
            "episode": {"steps": env.steps, "stops": env.stops,
                        "done": env.done, "success": env.success},
            "tallies": self.tallies(),
            "scene": {"scene_id": scene.scene_id, "scene_type": scene.scene_type,
                      "width_m": scene.width_m, "height_m": scene.height_m,
                      "grid": scene.grid.astype(int).tolist()},
            "injected": self.injected,
            "condition": env.spec.condition,
            "pace": self.pace,
            "paused": self.paused,
        }


def _error(code: str) -> dict:
    return {"type": "error", "code": code}


def apply_command(sess: Session, msg: dict) -> list[dict]:
    """Apply one queued client message at a step boundary; returns frames to send."""
    if msg.get("__bad"):
        return [_error("bad_message")]
    mtype = msg.get("type")
    if mtype == "reset":
        return [sess.reset_episode()]
    if mtype == "pause":
        sess.paused = True
        return []
    if mtype == "resume":
        sess.paused = False
        return []
    if mtype == "set_pace":
        sps = msg.get("sps")
        if not isinstance(sps, (int, float)) or isinstance(sps, bool) \
                or not math.isfinite(sps) or sps <= 0:
            return [_error("bad_message")]
        sess.pace = float(sps)
        return []
    if mtype == "point":
        bearing = msg.get("bearing_deg")
        if not isinstance(bearing, (int, float)) or isinstance(bearing, bool) \
                or not math.isfinite(bearing):
            return [_error("bad_message")]
        if not sess.has_active_episode():
            return [_error("no_active_episode")]
        sess.point(float(bearing))
        return []
    if mtype == "intervene":
        if not sess.has_active_episode():
            return [_error("no_active_episode")]
        sess.intervene()
        return []
    return [_error("bad_message")]


async def _reader(ws, queue: asyncio.Queue):
    try:
        async for text in ws.iter_text():
            try:
                msg = json.loads(text)
            except (json.JSONDecodeError, ValueError):
                msg = {"__bad": True}
            if not isinstance(msg, dict):
                msg = {"__bad": True}
            await queue.put(msg)
    finally:
        await queue.put(None)


async def session_loop(ws, ctx: dict, session_id: int):
    sess = Session(ctx, session_id)
    queue: asyncio.Queue = asyncio.Queue()
    reader = asyncio.create_task(_reader(ws, queue))
    loop = asyncio.get_running_loop()
    next_step_at = loop.time()
    try:
        while True:
            if sess.can_step():
                now = loop.time()
                if now < next_step_at:
                    try:
                        msg = await asyncio.wait_for(queue.get(),
                                                     timeout=next_step_at - now)
                    except asyncio.TimeoutError:
                        msg = _TICK
                else:
                    # overdue (slow host): still drain one queued command per
                    # boundary so human input never starves behind stepping
                    try:
                        msg = queue.get_nowait()
                    except asyncio.QueueEmpty:
                        msg = _TICK
            else:
                msg = await queue.get()
                next_step_at = loop.time() + sess.step_interval()
            if msg is _TICK:
                # overdue stepping may never block on IO; yield once per step
                # so readers, other sessions, and disconnects still progress
                await asyncio.sleep(0)
                now = loop.time()
                frame = sess.step_once()
                await ws.send_text(json.dumps(frame))
                next_step_at = max(now, next_step_at) + sess.step_interval()
                continue
            if msg is None:
                break
            for frame in apply_command(sess, msg):
                await ws.send_text(json.dumps(frame))
            if msg.get("type") in ("reset", "resume"):
                next_step_at = loop.time() + sess.step_interval()
    finally:
        reader.cancel()


_FALLBACK_PAGE = """<!doctype html>
<meta charset="utf-8"><title>gestnav</title>
<body style="font-family: system-ui; max-width: 40em; margin: 4em auto">
<h1>gestnav gateway</h1>
<p>The websocket endpoint is live at <code>/ws</code>, but no UI bundle was
found. Build the browser client and serve it with
<code>--ui-dir &lt;path to frontend/dist&gt;</code>.</p>
</body>"""


def create_app(checkpoint, scenes, pace: float = DEFAULT_PACE,
               ui_dir=None, anatomy_seed: int = 0, noise_sigma: float = 0.05,
               condition: str | None = None, seed: int = 0):
    """FastAPI app serving /ws sessions plus the static UI at /."""
    if isinstance(checkpoint, (str, Path)):
        params, ckpt_cfg = po.load_checkpoint(checkpoint)
    else:
        params, ckpt_cfg = checkpoint
    if condition is None:
        condition = ckpt_cfg.get("condition", simcore.REFERENCING)
    if condition not in simcore.CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    ctx = {"params": params, "scenes": list(scenes), "condition": condition,
           "anatomy_seed": int(anatomy_seed), "noise_sigma": float(noise_sigma),
           "pace": float(pace), "seed": int(seed)}
    counter = itertools.count()

    app = FastAPI()

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        try:
            await session_loop(ws, ctx, next(counter))
        except WebSocketDisconnect:
            pass
        except Exception:
            traceback.print_exc()

    index = Path(ui_dir) / "index.html" if ui_dir else None
    if index is not None and index.is_file():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    else:
        @app.get("/")
        async def fallback():
            return HTMLResponse(_FALLBACK_PAGE)
    return app


def serve(checkpoint, scenes, port: int = 8765, host: str = "127.0.0.1",
          pace: float = DEFAULT_PACE, ui_dir=None, anatomy_seed: int = 0,
          noise_sigma: float = 0.05, condition: str | None = None) -> int:
    import uvicorn

    if ui_dir is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        if (bundled / "index.html").is_file():
            ui_dir = bundled
    app = create_app(checkpoint, scenes, pace=pace, ui_dir=ui_dir,
                     anatomy_seed=anatomy_seed, noise_sigma=noise_sigma,
                     condition=condition)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except OSError as e:
        raise BindError(f"cannot bind {host}:{port}: {e}") from e
    return 0
