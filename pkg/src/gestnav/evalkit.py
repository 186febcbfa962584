"""SR/SPL metrics, the stop-budget protocol, and scripted reference agents.

Stop budgets are evaluated from a single unlimited-stop rollout per episode:
the trajectory up to the k-th stop is identical under any budget >= k (stop
counters are invisible to the policy), so an episode is a budget-k success
iff its first eligible stop has rank <= k. This keeps budget curves exactly
nested by construction.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from . import policy as po
from .simcore import Action, NavEnv, plan_oracle_actions, sample_episode

BUDGETS = (1, 2, 3, math.inf)


class EmptyInput(Exception):
    pass


class InvalidRecord(Exception):
    pass


@dataclass
class EpisodeRecord:
    success: bool
    p_len_m: float
    l_len_m: float
    stops_used: int
    steps: int
    scene_type: str
    condition: str


def success_rate(records) -> float:
    records = list(records)
    if not records:
        raise EmptyInput("no records")
    return sum(1.0 for r in records if r.success) / len(records)


def spl(records) -> float:
    records = list(records)
    if not records:
        raise EmptyInput("no records")
    total = 0.0
    for r in records:
        if not r.success:
            continue
        if r.l_len_m <= 0:
            raise InvalidRecord("successful record with non-positive shortest path")
        total += r.l_len_m / max(r.p_len_m, r.l_len_m)
    return total / len(records)


def budget_label(b) -> str:
    return "inf" if b == math.inf else str(int(b))


# ----------------------------------------------------------------- rollouts

def _unlimited_rollout(env: NavEnv, spec, env_seed: int, step_fn) -> dict:
    """Roll one episode with unlimited stops; step_fn(obs) -> action."""
    obs = env.reset(spec, env_seed)
    stops = []  # (rank, p_len at stop, eligible)
    while not env.done:
        a = step_fn(obs)
        obs, out = env.step(a)
        if out.stopped:
            stops.append((env.stops, env.p_len_m, out.stop_eligible))
    first_eligible = next((rank for rank, _, ok in stops if ok), None)
    return {
        "stops": stops,
        "first_eligible": first_eligible,
        "p_total": env.p_len_m,
        "l": env.l_len_m,
        "steps": env.steps,
        "success_any": env.success,
    }


def _records_for_budgets(roll: dict, budgets, scene_type: str, condition: str):
    out = {}
    fe = roll["first_eligible"]
    for b in budgets:
        success = fe is not None and fe <= b
        if success:
            p = next(pl for rank, pl, ok in roll["stops"] if rank == fe)
            stops_used = fe
        else:
            p = roll["p_total"]
            n_stops = len(roll["stops"])
            stops_used = n_stops if b == math.inf else min(n_stops, int(b))
        out[b] = EpisodeRecord(success, p, roll["l"], stops_used,
                               roll["steps"], scene_type, condition)
    return out


def evaluate_policy(params: po.PolicyParams, scenes: list, condition: str,
                    budgets=BUDGETS, episodes_per_scene: int = 250, seed: int = 0,
                    anatomy_seed: int = 0, noise_sigma: float = 0.05,
                    log_sink=None, progress=None):
    """Evaluate sampled (not greedy) rollouts; returns (report, records_by_budget)."""
    records: dict = {b: [] for b in budgets}
    logs_written = 0
    for si, scene in enumerate(scenes):
        env = NavEnv(scene)
        for i in range(episodes_per_scene):
            rng = np.random.default_rng([int(seed), si, i])
            spec = sample_episode(scene, condition, rng, anatomy_seed, noise_sigma)
            env_seed = int(rng.integers(2 ** 31))
            hidden = [po.initial_hidden(params)]

            def step_fn(obs):
                a, _, _, h = po.act(obs, hidden[0], params, rng)
                hidden[0] = h
                return a

            roll = _unlimited_rollout(env, spec, env_seed, step_fn)
            recs = _records_for_budgets(roll, budgets, scene.scene_type, condition)
            for b in budgets:
                records[b].append(recs[b])
            if log_sink is not None:
                log = env.episode_log(f"{scene.scene_id}:{i}", env_seed)
                log["scene_type"] = scene.scene_type
                log_sink.write(json.dumps(log) + "\n")
                logs_written += 1
        if progress:
            progress(f"scene {scene.scene_id}: {episodes_per_scene} episodes")
    report = build_report(records, condition)
    return report, records


def evaluate_scripted(scenes: list, condition: str, kind: str = "oracle",
                      budgets=BUDGETS, episodes_per_scene: int = 100, seed: int = 0,
                      anatomy_seed: int = 0, noise_sigma: float = 0.05,
                      log_sink=None):
    """Reference agents: kind 'oracle' follows the planner, 'random' is uniform."""
    records: dict = {b: [] for b in budgets}
    for si, scene in enumerate(scenes):
        env = NavEnv(scene)
        for i in range(episodes_per_scene):
            rng = np.random.default_rng([int(seed), 7, si, i])
            spec = sample_episode(scene, condition, rng, anatomy_seed, noise_sigma)
            env_seed = int(rng.integers(2 ** 31))
            if kind == "oracle":
                plan = list(plan_oracle_actions(scene, spec))

                def step_fn(obs, _plan=plan):
                    return _plan.pop(0) if _plan else int(Action.STOP)
            elif kind == "random":
                def step_fn(obs):
                    return int(rng.integers(4))
            else:
                raise ValueError(f"unknown scripted agent {kind!r}")
            roll = _unlimited_rollout(env, spec, env_seed, step_fn)
            recs = _records_for_budgets(roll, budgets, scene.scene_type, condition)
            for b in budgets:
                records[b].append(recs[b])
            if log_sink is not None:
                log = env.episode_log(f"{scene.scene_id}:{kind}:{i}", env_seed)
                log["scene_type"] = scene.scene_type
                log_sink.write(json.dumps(log) + "\n")
    return build_report(records, condition), records


# ------------------------------------------------------------------ reports

def build_report(records_by_budget: dict, condition: str) -> dict:
    """{scene_type|'all': {condition: {budget: {sr, spl, n}}}}"""
    report: dict = {}
    budgets = list(records_by_budget.keys())
    scene_types = sorted({r.scene_type for b in budgets for r in records_by_budget[b]})
    for st in scene_types + ["all"]:
        cell = {}
        for b in budgets:
            rs = [r for r in records_by_budget[b] if st == "all" or r.scene_type == st]
            if not rs:
                continue
            cell[budget_label(b)] = {
                "sr": success_rate(rs),
                "spl": spl(rs),
                "n": len(rs),
            }
        report.setdefault(st, {})[condition] = cell
    return report


def write_report(report: dict, path):
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")


def write_report_csv(report: dict, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["scene_type", "method", "budget", "sr", "spl", "n"])
        for st in sorted(report):
            for method in sorted(report[st]):
                for b in sorted(report[st][method]):
                    cell = report[st][method][b]
                    w.writerow([st, method, b, cell["sr"], cell["spl"], cell["n"]])


# ------------------------------------------- independent recompute (oracle)

def recompute_from_logs(jsonl_path, budgets=BUDGETS) -> dict:
    """Re-derive SR/SPL per budget from raw episode logs, from scratch.

    Uses only the logged action and stop sequences: p at the k-th stop is the
    count of MOVE_FORWARD actions before that stop times 0.25.
    """
    per_budget: dict = {b: [] for b in budgets}
    condition = None
    with open(jsonl_path) as f:
        for line in f:
            log = json.loads(line)
            condition = log["condition"]
            actions = log["actions"]
            moves_before = []
            moves = 0
            for a in actions:
                if a == int(Action.MOVE_FORWARD):
                    moves += 1
                if a == int(Action.STOP):
                    moves_before.append(moves)
            stops = log["stops"]
            first_eligible = None
            for rank, s in enumerate(stops, start=1):
                if s["eligible"]:
                    first_eligible = rank
                    break
            for b in budgets:
                success = first_eligible is not None and first_eligible <= b
                if success:
                    p = 0.25 * moves_before[first_eligible - 1]
                else:
                    p = 0.25 * moves
                per_budget[b].append(EpisodeRecord(
                    success, p, log["l_len_m"],
                    first_eligible or len(stops), len(actions),
                    log.get("scene_type", "unknown"), condition))
    return build_report(per_budget, condition or "unknown")
