"""Procedural indoor scenes on a 0.25 m occupancy grid, plus the geometric
oracles the rest of the stack leans on: shortest paths, line of sight, and
goal-eligibility sets.

Grid convention: ``grid[iy, ix]`` with 0 = FREE, 1 = BLOCKED. Cell (ix, iy)
has its center at ((ix + 0.5) * 0.25, (iy + 0.5) * 0.25) meters.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np

RES = 0.25
NUM_CATEGORIES = 10
SCENE_TYPES = ("kitchen", "living_room", "bedroom", "bathroom")
# disjoint category palettes per room type
PALETTES = {
    "kitchen": (0, 1, 2),
    "living_room": (3, 4, 5),
    "bedroom": (6, 7),
    "bathroom": (8, 9),
}
FREE, BLOCKED = 0, 1


class GenerationFailed(Exception):
    pass


class EmptyEligibleSet(Exception):
    pass


class Unreachable(Exception):
    pass


@dataclass
class ObjectInstance:
    instance_id: int
    category: int
    anchor: tuple[float, float]
    footprint: tuple[tuple[int, int], ...]


@dataclass
class SceneGenParams:
    min_size_m: float = 4.0
    max_size_m: float = 8.0
    min_objects: int = 4
    max_objects: int = 12
    max_wall_stubs: int = 3
    # multiplicity weights for 1/2/3 instances of a placed category
    multiplicity_weights: tuple[float, float, float] = (0.2, 0.4, 0.4)

    def validate(self):
        if not (4.0 <= self.min_size_m <= self.max_size_m <= 8.0):
            raise ValueError("room size range must sit inside [4.0, 8.0]")
        for s in (self.min_size_m, self.max_size_m):
            if abs(s / RES - round(s / RES)) > 1e-9:
                raise ValueError("room sizes must be multiples of 0.25")
        if not (1 <= self.min_objects <= self.max_objects <= 12) or self.min_objects < 1:
            raise ValueError("object count range must sit inside [1, 12]")


@dataclass
class Scene:
    scene_id: str
    seed: int
    scene_type: str
    width_m: float
    height_m: float
    grid: np.ndarray
    objects: list[ObjectInstance]
    _cell_cat: dict | None = field(default=None, repr=False, compare=False)
    _ray_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def nx(self) -> int:
        return self.grid.shape[1]

    @property
    def ny(self) -> int:
        return self.grid.shape[0]

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.nx and 0 <= iy < self.ny

    def is_free(self, ix: int, iy: int) -> bool:
        return self.in_bounds(ix, iy) and self.grid[iy, ix] == FREE

    def cell_category(self, ix: int, iy: int) -> int | None:
        """Category of the object whose footprint covers the cell, if any."""
        if self._cell_cat is None:
            m = {}
            for obj in self.objects:
                for c in obj.footprint:
                    m[c] = obj.category
            self._cell_cat = m
        return self._cell_cat.get((ix, iy))

    def instance(self, instance_id: int) -> ObjectInstance:
        for obj in self.objects:
            if obj.instance_id == instance_id:
                return obj
        raise KeyError(f"no instance {instance_id} in {self.scene_id}")


def cell_center(cell: tuple[int, int]) -> tuple[float, float]:
    return ((cell[0] + 0.5) * RES, (cell[1] + 0.5) * RES)


def point_cell(x: float, y: float) -> tuple[int, int]:
    return (int(math.floor(x / RES)), int(math.floor(y / RES)))


# ------------------------------------------------------------ generation

def _flood_free_count(grid: np.ndarray) -> int:
    """Size of the 4-connected FREE component containing the first FREE cell."""
    ny, nx = grid.shape
    start = None
    for iy in range(ny):
        for ix in range(nx):
            if grid[iy, ix] == FREE:
                start = (ix, iy)
                break
        if start:
            break
    if start is None:
        return 0
    seen = {start}
    stack = [start]
    while stack:
        cx, cy = stack.pop()
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (cx + dx, cy + dy)
            if 0 <= n[0] < nx and 0 <= n[1] < ny and grid[n[1], n[0]] == FREE and n not in seen:
                seen.add(n)
                stack.append(n)
    return len(seen)


def _connected(grid: np.ndarray) -> bool:
    return _flood_free_count(grid) == int((grid == FREE).sum())


def generate_scene(seed: int, scene_type: str, params: SceneGenParams | None = None) -> Scene:
    if scene_type not in SCENE_TYPES:
        raise ValueError(f"unknown scene type {scene_type!r}")
    params = params or SceneGenParams()
    params.validate()
    rng = np.random.default_rng([int(seed), SCENE_TYPES.index(scene_type)])
    lo = int(round(params.min_size_m / RES))
    hi = int(round(params.max_size_m / RES))
    nx = int(rng.integers(lo, hi + 1))
    ny = int(rng.integers(lo, hi + 1))
    palette = PALETTES[scene_type]
    cap = min(params.max_objects, 3 * len(palette))
    n_target = int(rng.integers(min(params.min_objects, cap), cap + 1))

    retries = 0
    while True:
        grid = np.zeros((ny, nx), dtype=np.uint8)
        grid[0, :] = BLOCKED
        grid[-1, :] = BLOCKED
        grid[:, 0] = BLOCKED
        grid[:, -1] = BLOCKED

        ok = True
        # a few interior wall stubs so sight lines are not always trivial
        for _ in range(int(rng.integers(0, params.max_wall_stubs + 1))):
            if not _place_stub(grid, rng):
                ok = False
                break

        objects: list[ObjectInstance] = []
        if ok:
            plan = _multiplicity_plan(rng, palette, n_target, params.multiplicity_weights)
            iid = 0
            for cat in plan:
                fp = _place_footprint(grid, rng)
                if fp is None:
                    ok = False
                    break
                xs = [c[0] for c in fp]
                ys = [c[1] for c in fp]
                anchor = ((min(xs) + max(xs) + 1) / 2 * RES, (min(ys) + max(ys) + 1) / 2 * RES)
                objects.append(ObjectInstance(iid, cat, anchor, tuple(sorted(fp))))
                iid += 1

        if ok:
            scene = Scene(f"{scene_type}_{seed}", int(seed), scene_type,
                          nx * RES, ny * RES, grid, objects)
            if all(_has_eligible(scene, o) for o in objects):
                return scene
        retries += 1
        if retries >= 1000:
            raise GenerationFailed(
                f"could not place {n_target} objects in a {nx}x{ny} {scene_type} after 1000 retries")


def _multiplicity_plan(rng, palette, n_target: int, weights) -> list[int]:
    """Expand the palette into an instance list totalling exactly n_target."""
    cats = list(palette)
    rng.shuffle(cats)
    plan: list[int] = []
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    for cat in cats:
        remaining = n_target - len(plan)
        if remaining <= 0:
            break
        m = int(rng.choice((1, 2, 3), p=w))
        # keep room for remaining categories to contribute at least 0
        m = min(m, remaining)
        plan.extend([cat] * m)
    # top up by raising multiplicities if the draw fell short
    i = 0
    while len(plan) < n_target:
        if plan.count(cats[i % len(cats)]) < 3:
            plan.append(cats[i % len(cats)])
        i += 1
        if i > 100:
            break
    return plan[:n_target]


def _place_stub(grid: np.ndarray, rng) -> bool:
    ny, nx = grid.shape
    for _ in range(50):
        horizontal = bool(rng.integers(0, 2))
        length = int(rng.integers(2, 7))
        ix = int(rng.integers(1, nx - 1))
        iy = int(rng.integers(1, ny - 1))
        cells = [(ix + i, iy) if horizontal else (ix, iy + i) for i in range(length)]
        if any(not (1 <= cx < nx - 1 and 1 <= cy < ny - 1) for cx, cy in cells):
            continue
        if any(grid[cy, cx] == BLOCKED for cx, cy in cells):
            continue
        trial = grid.copy()
        for cx, cy in cells:
            trial[cy, cx] = BLOCKED
        if _connected(trial) and (trial == FREE).sum() >= 0.45 * (nx - 2) * (ny - 2):
            grid[:] = trial
            return True
    return False


def _place_footprint(grid: np.ndarray, rng) -> list[tuple[int, int]] | None:
    ny, nx = grid.shape
    for _ in range(80):
        w = int(rng.integers(1, 3))
        h = int(rng.integers(1, 3))
        ix = int(rng.integers(1, nx - 1 - w + 1))
        iy = int(rng.integers(1, ny - 1 - h + 1))
        cells = [(ix + a, iy + b) for a in range(w) for b in range(h)]
        if any(grid[cy, cx] == BLOCKED for cx, cy in cells):
            continue
        trial = grid.copy()
        for cx, cy in cells:
            trial[cy, cx] = BLOCKED
        if _connected(trial) and (trial == FREE).sum() >= 0.4 * (nx - 2) * (ny - 2):
            grid[:] = trial
            return cells
    return None


def _has_eligible(scene: Scene, obj: ObjectInstance) -> bool:
    try:
        eligible_goal_cells(scene, obj)
        return True
    except EmptyEligibleSet:
        return False


# ------------------------------------------------------------- path oracle

SQRT2 = math.sqrt(2.0)
_MOVES = (
    (1, 0, RES), (-1, 0, RES), (0, 1, RES), (0, -1, RES),
    (1, 1, RES * SQRT2), (1, -1, RES * SQRT2), (-1, 1, RES * SQRT2), (-1, -1, RES * SQRT2),
)


def shortest_path_length(scene: Scene, start: tuple[int, int], goals) -> float:
    """Minimal 8-connected path length in meters from start to any goal cell.

    Diagonal steps cost 0.25*sqrt(2) and are forbidden when both adjacent
    orthogonal cells are BLOCKED (no corner cutting). Raises Unreachable.
    """
    goals = set(goals)
    if not goals:
        raise ValueError("empty goal set")
    if not scene.is_free(*start):
        raise ValueError(f"start {start} is not FREE")
    if start in goals:
        return 0.0
    dist = {start: 0.0}
    pq = [(0.0, start)]
    while pq:
        d, cell = heapq.heappop(pq)
        if d > dist.get(cell, math.inf):
            continue
        if cell in goals:
            return d
        cx, cy = cell
        for dx, dy, w in _MOVES:
            n = (cx + dx, cy + dy)
            if not scene.is_free(*n):
                continue
            if dx != 0 and dy != 0:
                if not scene.is_free(cx + dx, cy) and not scene.is_free(cx, cy + dy):
                    continue
            nd = d + w
            if nd < dist.get(n, math.inf) - 1e-12:
                dist[n] = nd
                heapq.heappush(pq, (nd, n))
    raise Unreachable(f"no goal in {goals} reachable from {start}")


def shortest_path_cells(scene: Scene, start: tuple[int, int], goals) -> list[tuple[int, int]]:
    """Like shortest_path_length but returns the cell sequence, start included."""
    goals = set(goals)
    if start in goals:
        return [start]
    dist = {start: 0.0}
    prev: dict = {}
    pq = [(0.0, start)]
    end = None
    while pq:
        d, cell = heapq.heappop(pq)
        if d > dist.get(cell, math.inf):
            continue
        if cell in goals:
            end = cell
            break
        cx, cy = cell
        for dx, dy, w in _MOVES:
            n = (cx + dx, cy + dy)
            if not scene.is_free(*n):
                continue
            if dx != 0 and dy != 0:
                if not scene.is_free(cx + dx, cy) and not scene.is_free(cx, cy + dy):
                    continue
            nd = d + w
            if nd < dist.get(n, math.inf) - 1e-12:
                dist[n] = nd
                prev[n] = cell
                heapq.heappush(pq, (nd, n))
    if end is None:
        raise Unreachable(f"no goal in {goals} reachable from {start}")
    path = [end]
    while path[-1] != start:
        path.append(prev[path[-1]])
    path.reverse()
    return path


# -------------------------------------------------------------- visibility

def line_of_sight(scene: Scene, a: tuple[float, float], b: tuple[float, float],
                  ignore=frozenset()) -> bool:
    """True iff segment a->b crosses no BLOCKED cell interior.

    Grid traversal (Amanatides & Woo); exact corner contact steps diagonally
    so grazing a corner does not count as crossing the two side cells. Cells
    in ``ignore`` never block (used for a target's own footprint).
    """
    ax, ay = a
    bx, by = b
    ix, iy = point_cell(ax, ay)
    jx, jy = point_cell(bx, by)

    def blocked(cx, cy):
        if (cx, cy) in ignore:
            return False
        return not scene.in_bounds(cx, cy) or scene.grid[cy, cx] == BLOCKED

    if blocked(ix, iy):
        return False
    if (ix, iy) == (jx, jy):
        return True
    dx = bx - ax
    dy = by - ay
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    if dx != 0:
        t_dx = RES / abs(dx)
        nxb = (ix + (1 if sx > 0 else 0)) * RES
        t_mx = (nxb - ax) / dx
    else:
        t_dx, t_mx = math.inf, math.inf
    if dy != 0:
        t_dy = RES / abs(dy)
        nyb = (iy + (1 if sy > 0 else 0)) * RES
        t_my = (nyb - ay) / dy
    else:
        t_dy, t_my = math.inf, math.inf

    for _ in range(scene.nx + scene.ny + 4):
        # segment ends at or before the next boundary: no further interior
        # is crossed (endpoints exactly on a cell edge or corner land here)
        if min(t_mx, t_my) >= 1.0 - 1e-12:
            return True
        if abs(t_mx - t_my) < 1e-12:  # exact corner: step diagonally
            ix += sx
            iy += sy
            t_mx += t_dx
            t_my += t_dy
        elif t_mx < t_my:
            ix += sx
            t_mx += t_dx
        else:
            iy += sy
            t_my += t_dy
        if blocked(ix, iy):
            return False
        if (ix, iy) == (jx, jy):
            return True
    return False  # unreachable in practice; degenerate numeric input


def eligible_goal_cells(scene: Scene, instance: ObjectInstance) -> set[tuple[int, int]]:
    """FREE cells whose center is within 1.5 m of the anchor with clear sight."""
    axp, ayp = instance.anchor
    fp = frozenset(instance.footprint)
    r_cells = int(math.ceil(1.5 / RES)) + 1
    cx, cy = point_cell(axp, ayp)
    out = set()
    for iy in range(max(0, cy - r_cells), min(scene.ny, cy + r_cells + 1)):
        for ix in range(max(0, cx - r_cells), min(scene.nx, cx + r_cells + 1)):
            if scene.grid[iy, ix] != FREE:
                continue
            px, py = cell_center((ix, iy))
            if math.hypot(px - axp, py - ayp) > 1.5:
                continue
            if line_of_sight(scene, (px, py), (axp, ayp), ignore=fp):
                out.add((ix, iy))
    if not out:
        raise EmptyEligibleSet(f"instance {instance.instance_id} in {scene.scene_id}")
    return out


# ------------------------------------------------------------ serialization

def scene_to_dict(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "seed": scene.seed,
        "scene_type": scene.scene_type,
        "width_m": scene.width_m,
        "height_m": scene.height_m,
        "grid": [int(v) for v in scene.grid.reshape(-1)],
        "objects": [
            {
                "instance_id": o.instance_id,
                "category": o.category,
                "anchor": [o.anchor[0], o.anchor[1]],
                "footprint": [[c[0], c[1]] for c in o.footprint],
            }
            for o in scene.objects
        ],
    }


def scene_from_dict(d: dict) -> Scene:
    ny = int(round(d["height_m"] / RES))
    nx = int(round(d["width_m"] / RES))
    grid = np.asarray(d["grid"], dtype=np.uint8).reshape(ny, nx)
    objects = [
        ObjectInstance(
            int(o["instance_id"]), int(o["category"]),
            (float(o["anchor"][0]), float(o["anchor"][1])),
            tuple(sorted((int(c[0]), int(c[1])) for c in o["footprint"])),
        )
        for o in d["objects"]
    ]
    return Scene(d["scene_id"], int(d["seed"]), d["scene_type"],
                 float(d["width_m"]), float(d["height_m"]), grid, objects)


def save_scene(scene: Scene, path):
    with open(path, "w") as f:
        json.dump(scene_to_dict(scene), f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_scene(path) -> Scene:
    with open(path) as f:
        return scene_from_dict(json.load(f))
