"""The navigation MDP: embodiment, dynamics, observations, rewards, stops.

Headings are integers in [0, 24), each unit 15 degrees, counterclockwise,
0 = east. TURN_LEFT increments. A forward step translates 0.25 m along the
heading and snaps to the nearest cell (half-to-even per axis), which always
lands on one of the 8 neighbors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import gesturesynth, scenegen
from .scenegen import (RES, Scene, cell_center, eligible_goal_cells, line_of_sight,
                       point_cell, shortest_path_cells, shortest_path_length)

MAX_STEPS = 100
NUM_RAYS = 32
FOV_RAD = math.pi / 2
STOP_RADIUS = 1.5
DEPTH_CLAMP = 10.0
REWARD_SUCCESS = 1.0
REWARD_TIME = -0.001
REWARD_COLLISION = -0.005
REWARD_BAD_STOP = -0.01

BASELINE, REFERENCING, INTERVENTION = "baseline", "referencing", "intervention"
CONDITIONS = (BASELINE, REFERENCING, INTERVENTION)


class InvalidSpec(Exception):
    pass


class EpisodeFinished(Exception):
    pass


class Action(IntEnum):
    MOVE_FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3


@dataclass
class Pose:
    x: float
    y: float
    heading: int  # multiples of 15 degrees, ccw from east

    def angle(self) -> float:
        return self.heading * math.pi / 12.0

    def cell(self) -> tuple[int, int]:
        return point_cell(self.x, self.y)


def _half_even(v: float) -> int:
    # values are cos/sin of 15-degree multiples; exact halves get banker's rounding
    f = math.floor(v)
    if abs(v - f - 0.5) < 1e-9:
        return f if f % 2 == 0 else f + 1
    return round(v)


def _move_table():
    out = []
    for h in range(24):
        a = h * math.pi / 12.0
        out.append((_half_even(math.cos(a)), _half_even(math.sin(a))))
    return tuple(out)


MOVE_DELTA = _move_table()  # per-heading cell displacement of MOVE_FORWARD


@dataclass
class Observation:
    vision: np.ndarray   # [32, 1 + C]
    gesture: np.ndarray  # [100, 95]
    target: int


@dataclass
class EpisodeSpec:
    scene_ref: str
    start: Pose
    target_category: int
    target_instance: int
    condition: str
    referencing_gesture: np.ndarray
    max_steps: int = MAX_STEPS
    anatomy_seed: int = 0
    style_seed: int = 0
    noise_sigma: float = gesturesynth.DEFAULT_SIGMA


@dataclass
class StepOutcome:
    reward: float
    reward_terms: dict
    collided: bool
    stopped: bool
    stop_eligible: bool
    done: bool
    success: bool


def wrap_pi(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


def target_visible(scene: Scene, pose: Pose, instance) -> bool:
    ax, ay = instance.anchor
    bearing = math.atan2(ay - pose.y, ax - pose.x)
    if abs(wrap_pi(bearing - pose.angle())) > FOV_RAD / 2 + 1e-9:
        return False
    return line_of_sight(scene, (pose.x, pose.y), (ax, ay),
                         ignore=frozenset(instance.footprint))


def stop_eligible(scene: Scene, pose: Pose, instance) -> bool:
    ax, ay = instance.anchor
    if math.hypot(ax - pose.x, ay - pose.y) > STOP_RADIUS:
        return False
    return target_visible(scene, pose, instance)


def intervention_due(pose: Pose, instance) -> bool:
    """Strictly more than 90 degrees between heading and the direction to the anchor."""
    ax, ay = instance.anchor
    a = pose.angle()
    dot = math.cos(a) * (ax - pose.x) + math.sin(a) * (ay - pose.y)
    return dot < 0.0


# cached so repeated deliveries hand out the same array object (the policy's
# per-rollout encoding cache keys on identity)
_template_cache: dict = {}


def intervention_template(anatomy_seed: int, index: int) -> np.ndarray:
    key = (int(anatomy_seed), int(index))
    t = _template_cache.get(key)
    if t is None:
        t = gesturesynth.intervention_gesture(index, gesturesynth.GestureAnatomy(anatomy_seed))
        t.flags.writeable = False
        _template_cache[key] = t
    return t


def deliver_gesture(spec: EpisodeSpec, pose: Pose, rng, scene: Scene | None = None,
                    instance=None) -> tuple[np.ndarray, str]:
    """Gesture channel contents for the current step, plus its kind label."""
    if spec.condition == BASELINE:
        return gesturesynth.zero_gesture(), "none"
    if spec.condition == REFERENCING:
        return spec.referencing_gesture, "referencing"
    if spec.condition == INTERVENTION:
        if intervention_due(pose, instance):
            idx = int(rng.integers(gesturesynth.NUM_TEMPLATES))
            return intervention_template(spec.anatomy_seed, idx), "intervention"
        return gesturesynth.zero_gesture(), "none"
    raise ValueError(f"unknown condition {spec.condition!r}")


# ---------------------------------------------------------------- raycasts

def _cast_ray(scene: Scene, x: float, y: float, angle: float) -> tuple[float, int | None]:
    """Distance to the first BLOCKED cell along the ray and its category."""
    dx = math.cos(angle)
    dy = math.sin(angle)
    ix, iy = point_cell(x, y)
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    if dx != 0:
        t_dx = RES / abs(dx)
        t_mx = ((ix + (1 if sx > 0 else 0)) * RES - x) / dx
    else:
        t_dx, t_mx = math.inf, math.inf
    if dy != 0:
        t_dy = RES / abs(dy)
        t_my = ((iy + (1 if sy > 0 else 0)) * RES - y) / dy
    else:
        t_dy, t_my = math.inf, math.inf
    for _ in range(scene.nx + scene.ny + 4):
        if abs(t_mx - t_my) < 1e-12:
            t = t_mx
            ix += sx
            iy += sy
            t_mx += t_dx
            t_my += t_dy
        elif t_mx < t_my:
            t = t_mx
            ix += sx
            t_mx += t_dx
        else:
            t = t_my
            iy += sy
            t_my += t_dy
        if t > DEPTH_CLAMP:
            return DEPTH_CLAMP, None
        if not scene.in_bounds(ix, iy) or scene.grid[iy, ix] == scenegen.BLOCKED:
            return t, scene.cell_category(ix, iy)
    return DEPTH_CLAMP, None


_RAY_OFFSETS = np.linspace(-FOV_RAD / 2, FOV_RAD / 2, NUM_RAYS)


def render_rays(scene: Scene, pose: Pose) -> np.ndarray:
    """[32, 1 + C] block: normalized depth plus one-hot category per ray."""
    key = (pose.cell(), pose.heading)
    cached = scene._ray_cache.get(key)
    if cached is not None:
        return cached
    block = np.zeros((NUM_RAYS, 1 + scenegen.NUM_CATEGORIES))
    base = pose.angle()
    for i, off in enumerate(_RAY_OFFSETS):
        d, cat = _cast_ray(scene, pose.x, pose.y, base + off)
        block[i, 0] = min(d, DEPTH_CLAMP) / DEPTH_CLAMP
        if cat is not None:
            block[i, 1 + cat] = 1.0
    block.flags.writeable = False
    scene._ray_cache[key] = block
    return block


# -------------------------------------------------------------- environment

class NavEnv:
    """One mutable episode at a time on an immutable scene."""

    def __init__(self, scene: Scene):
        self.scene = scene
        self.spec: EpisodeSpec | None = None
        self.done = True

    def reset(self, spec: EpisodeSpec, seed: int = 0) -> Observation:
        scene = self.scene
        if spec.scene_ref != scene.scene_id:
            raise InvalidSpec(f"spec targets {spec.scene_ref}, env holds {scene.scene_id}")
        instance = scene.instance(spec.target_instance)
        if instance.category != spec.target_category:
            raise InvalidSpec("target_instance category mismatch")
        if not scene.is_free(*spec.start.cell()):
            raise InvalidSpec("start cell not FREE")
        try:
            eligible = cached_eligible_cells(scene, instance)
        except scenegen.EmptyEligibleSet as e:
            raise InvalidSpec(f"target has no eligible goal cells: {e}") from e
        if spec.start.cell() in eligible:
            raise InvalidSpec("start already inside the eligible goal set")
        try:
            self.l_len_m = shortest_path_length(scene, spec.start.cell(), eligible)
        except scenegen.Unreachable as e:
            raise InvalidSpec(f"target unreachable: {e}") from e
        self.spec = spec
        self.instance = instance
        self.pose = Pose(spec.start.x, spec.start.y, spec.start.heading)
        self.steps = 0
        self.stops = 0
        self.done = False
        self.success = False
        self.p_len_m = 0.0
        self.collisions = 0
        self._rng = np.random.default_rng([int(seed), 3])
        self.actions_taken: list[int] = []
        self.rewards: list[float] = []
        self.stop_events: list[dict] = []
        self.trajectory = [(self.pose.x, self.pose.y, self.pose.heading)]
        self.last_gesture_kind = "none"
        return self._observe()

    def _observe(self) -> Observation:
        gesture, kind = deliver_gesture(self.spec, self.pose, self._rng,
                                        self.scene, self.instance)
        self.last_gesture_kind = kind
        return Observation(render_rays(self.scene, self.pose), gesture,
                           self.spec.target_category)

    def step(self, action) -> tuple[Observation, StepOutcome]:
        if self.done:
            raise EpisodeFinished("step() after done")
        action = Action(action)
        self.steps += 1
        terms = {"success": 0.0, "time": REWARD_TIME, "collision": 0.0, "bad_stop": 0.0}
        collided = stopped = eligible = False
        if action == Action.TURN_LEFT:
            self.pose.heading = (self.pose.heading + 1) % 24
        elif action == Action.TURN_RIGHT:
            self.pose.heading = (self.pose.heading - 1) % 24
        elif action == Action.MOVE_FORWARD:
            self.p_len_m += RES
            dx, dy = MOVE_DELTA[self.pose.heading]
            cx, cy = self.pose.cell()
            nxt = (cx + dx, cy + dy)
            if self.scene.is_free(*nxt):
                self.pose.x, self.pose.y = cell_center(nxt)
            else:
                collided = True
                self.collisions += 1
                terms["collision"] = REWARD_COLLISION
        elif action == Action.STOP:
            stopped = True
            self.stops += 1
            eligible = stop_eligible(self.scene, self.pose, self.instance)
            self.stop_events.append({"step": self.steps, "eligible": bool(eligible)})
            if eligible:
                terms["success"] = REWARD_SUCCESS
                self.success = True
                self.done = True
            else:
                terms["bad_stop"] = REWARD_BAD_STOP
        if self.steps >= self.spec.max_steps:
            self.done = True
        reward = terms["success"] + terms["time"] + terms["collision"] + terms["bad_stop"]
        self.actions_taken.append(int(action))
        self.rewards.append(reward)
        self.trajectory.append((self.pose.x, self.pose.y, self.pose.heading))
        outcome = StepOutcome(reward, terms, collided, stopped, eligible,
                              self.done, self.success)
        return self._observe(), outcome

    def episode_log(self, episode_id: str, env_seed: int = 0) -> dict:
        spec = self.spec
        return {
            "episode_id": episode_id,
            "scene_id": self.scene.scene_id,
            "condition": spec.condition,
            "target_category": spec.target_category,
            "target_instance": spec.target_instance,
            "start_pose": [spec.start.x, spec.start.y, spec.start.heading],
            "actions": list(self.actions_taken),
            "rewards": list(self.rewards),
            "stops": list(self.stop_events),
            "success": bool(self.success),
            "steps": self.steps,
            "p_len_m": self.p_len_m,
            "l_len_m": self.l_len_m,
            "anatomy_seed": spec.anatomy_seed,
            "style_seed": spec.style_seed,
            "noise_sigma": spec.noise_sigma,
            "env_seed": int(env_seed),
        }


def cached_eligible_cells(scene: Scene, instance) -> set:
    key = ("elig", instance.instance_id)
    got = scene._ray_cache.get(key)
    if got is None:
        got = eligible_goal_cells(scene, instance)
        scene._ray_cache[key] = got
    return got


# ---------------------------------------------------------- episode sampling

def _free_cells(scene: Scene) -> list[tuple[int, int]]:
    key = ("free",)
    got = scene._ray_cache.get(key)
    if got is None:
        ys, xs = np.nonzero(scene.grid == scenegen.FREE)
        got = [(int(x), int(y)) for x, y in zip(xs, ys)]
        scene._ray_cache[key] = got
    return got


def sample_episode(scene: Scene, condition: str, rng, anatomy_seed: int,
                   noise_sigma: float = gesturesynth.DEFAULT_SIGMA,
                   max_oracle_steps: int = 95) -> EpisodeSpec:
    """Draw a solvable episode: reachable target, start outside the goal set,
    and a scripted-agent solution within the step cap."""
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    anatomy = gesturesynth.GestureAnatomy(anatomy_seed)
    free = _free_cells(scene)
    for _ in range(500):
        instance = scene.objects[int(rng.integers(len(scene.objects)))]
        eligible = cached_eligible_cells(scene, instance)
        cell = free[int(rng.integers(len(free)))]
        heading = int(rng.integers(24))
        if cell in eligible:
            continue
        try:
            shortest_path_length(scene, cell, eligible)
        except scenegen.Unreachable:
            continue
        x, y = cell_center(cell)
        start = Pose(x, y, heading)
        ax, ay = instance.anchor
        bearing = wrap_pi(math.atan2(ay - y, ax - x) - start.angle())
        style_seed = int(rng.integers(2 ** 31))
        spec = EpisodeSpec(scene.scene_id, start, instance.category,
                           instance.instance_id, condition,
                           gesturesynth.referencing_gesture(bearing, anatomy,
                                                            style_seed, noise_sigma),
                           MAX_STEPS, int(anatomy_seed), style_seed, noise_sigma)
        if len(plan_oracle_actions(scene, spec)) <= max_oracle_steps:
            return spec
    raise InvalidSpec(f"could not sample a solvable episode on {scene.scene_id}")


# ------------------------------------------------------------ scripted agent

_DIR_TO_HEADING = {(1, 0): 0, (1, 1): 3, (0, 1): 6, (-1, 1): 9,
                   (-1, 0): 12, (-1, -1): 15, (0, -1): 18, (1, -1): 21}


def _turns_toward(h: int, hd: int) -> list[int]:
    diff = (hd - h) % 24
    if diff == 0:
        return []
    if diff <= 12:  # tie at 12 turns left
        return [int(Action.TURN_LEFT)] * diff
    return [int(Action.TURN_RIGHT)] * (24 - diff)


def plan_oracle_actions(scene: Scene, spec: EpisodeSpec) -> list[int]:
    """Shortest-path walk, minimal rotations, STOP at first eligible pose."""
    instance = scene.instance(spec.target_instance)
    eligible = cached_eligible_cells(scene, instance)
    path = shortest_path_cells(scene, spec.start.cell(), eligible)
    actions: list[int] = []
    cell = spec.start.cell()
    h = spec.start.heading

    def eligible_now() -> bool:
        x, y = cell_center(cell)
        return stop_eligible(scene, Pose(x, y, h), instance)

    for nxt in path[1:]:
        hd = _DIR_TO_HEADING[(nxt[0] - cell[0], nxt[1] - cell[1])]
        for turn in _turns_toward(h, hd):
            if eligible_now():
                actions.append(int(Action.STOP))
                return actions
            actions.append(turn)
            h = (h + 1) % 24 if turn == int(Action.TURN_LEFT) else (h - 1) % 24
        if eligible_now():
            actions.append(int(Action.STOP))
            return actions
        actions.append(int(Action.MOVE_FORWARD))
        cell = nxt
    for _ in range(13):
        if eligible_now():
            break
        ax, ay = instance.anchor
        x, y = cell_center(cell)
        hd = int(round(math.atan2(ay - y, ax - x) / (math.pi / 12))) % 24
        turns = _turns_toward(h, hd)
        if not turns:
            break
        actions.append(turns[0])
        h = (h + 1) % 24 if turns[0] == int(Action.TURN_LEFT) else (h - 1) % 24
    actions.append(int(Action.STOP))
    return actions
