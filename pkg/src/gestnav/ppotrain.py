"""Rollout collection, GAE, clipped PPO updates, and the training loop.

The buffer is env-major: env e owns the contiguous slice
[e*horizon, (e+1)*horizon), which is also exactly one recurrent minibatch,
so GRU unrolls never mix streams. Collection is sequential over envs with a
single rng, which keeps buffers byte-reproducible for a given seed.
"""
from __future__ import annotations

import json
import time
from collections import deque
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import policy as po
from . import tensorkit as tk
from .simcore import NavEnv, sample_episode


class NonFiniteLoss(Exception):
    pass


@dataclass
class TrainConfig:
    horizon: int = 128
    num_envs: int = 10
    minibatch: int = 128
    epochs: int = 4
    lr: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    grad_clip_norm: float = 0.5
    total_env_steps: int = 500_000
    seed: int = 0
    anatomy_seed: int = 0
    noise_sigma: float = 0.05

    @property
    def buffer(self) -> int:
        return self.horizon * self.num_envs

    def validate(self):
        if self.buffer % self.minibatch != 0:
            raise ValueError("minibatch must divide buffer")
        if self.minibatch != self.horizon:
            # recurrent integrity: a minibatch is one env segment
            raise ValueError("minibatch must equal horizon (one segment per minibatch)")


class RolloutBuffer:
    def __init__(self, cfg: TrainConfig, vis_dim: int, hidden: int):
        B = cfg.buffer
        self.cfg = cfg
        self.visions = np.zeros((B, vis_dim))
        self.gestures: list = [None] * B
        self.targets = np.zeros(B, dtype=np.int64)
        self.actions = np.zeros(B, dtype=np.int64)
        self.log_probs = np.zeros(B)
        self.values = np.zeros(B)
        self.rewards = np.zeros(B)
        self.dones = np.zeros(B, dtype=bool)
        self.resets = np.zeros(B, dtype=bool)
        self.env_index = np.zeros(B, dtype=np.int64)
        self.step_index = np.zeros(B, dtype=np.int64)
        self.initial_hidden = np.zeros((cfg.num_envs, hidden))
        self.bootstrap_values = np.zeros(cfg.num_envs)
        self.advantages = None
        self.returns = None

    def segment(self, e: int) -> slice:
        return slice(e * self.cfg.horizon, (e + 1) * self.cfg.horizon)


class Collector:
    """Owns the vector of envs and their cross-segment state."""

    def __init__(self, scenes: list, cfg: TrainConfig, condition: str, rng,
                 hidden: int):
        if not scenes:
            raise ValueError("no scenes to train on")
        self.cfg = cfg
        self.condition = condition
        self.rng = rng
        self.envs = [NavEnv(scenes[i % len(scenes)]) for i in range(cfg.num_envs)]
        self.obs = [None] * cfg.num_envs
        self.H = np.zeros((cfg.num_envs, hidden))
        self.fresh = [True] * cfg.num_envs
        self.ep_reward = np.zeros(cfg.num_envs)
        self.finished = deque(maxlen=100)  # (episode reward, success)
        self.episodes_done = 0
        for e in range(cfg.num_envs):
            self._new_episode(e)

    def _new_episode(self, e: int):
        env = self.envs[e]
        spec = sample_episode(env.scene, self.condition, self.rng,
                              self.cfg.anatomy_seed, self.cfg.noise_sigma)
        seed = int(self.rng.integers(2 ** 31))
        self.obs[e] = env.reset(spec, seed)

    def collect(self, params: po.PolicyParams) -> RolloutBuffer:
        cfg = self.cfg
        vis_dim = self.obs[0].vision.size
        buf = RolloutBuffer(cfg, vis_dim, self.H.shape[1])
        buf.initial_hidden = self.H.copy()
        cache: dict = {}
        for t in range(cfg.horizon):
            actions, logps, values, H2 = po.act_batch(self.obs, self.H, params,
                                                      self.rng, cache)
            self.H = H2
            for e, env in enumerate(self.envs):
                i = e * cfg.horizon + t
                o = self.obs[e]
                buf.visions[i] = o.vision.ravel()
                buf.gestures[i] = o.gesture
                buf.targets[i] = o.target
                buf.actions[i] = actions[e]
                buf.log_probs[i] = logps[e]
                buf.values[i] = values[e]
                buf.env_index[i] = e
                buf.step_index[i] = t
                buf.resets[i] = self.fresh[e]
                self.fresh[e] = False
                obs2, out = env.step(int(actions[e]))
                buf.rewards[i] = out.reward
                buf.dones[i] = out.done
                self.ep_reward[e] += out.reward
                if out.done:
                    self.finished.append((float(self.ep_reward[e]), bool(out.success)))
                    self.episodes_done += 1
                    self.ep_reward[e] = 0.0
                    self._new_episode(e)
                    self.H[e] = 0.0
                    self.fresh[e] = True
                else:
                    self.obs[e] = obs2
        for e in range(cfg.num_envs):
            buf.bootstrap_values[e] = po.value_of(self.obs[e], self.H[e], params)
        return buf


def compute_gae(buf: RolloutBuffer, gamma: float, lam: float) -> RolloutBuffer:
    cfg = buf.cfg
    adv = np.zeros(cfg.buffer)
    for e in range(cfg.num_envs):
        seg = buf.segment(e)
        r = buf.rewards[seg]
        v = buf.values[seg]
        d = buf.dones[seg]
        a = 0.0
        next_v = buf.bootstrap_values[e]
        out = np.zeros(cfg.horizon)
        for t in range(cfg.horizon - 1, -1, -1):
            nonterm = 0.0 if d[t] else 1.0
            delta = r[t] + gamma * next_v * nonterm - v[t]
            a = delta + gamma * lam * nonterm * a
            out[t] = a
            next_v = v[t]
        adv[seg] = out
    buf.advantages = adv
    buf.returns = adv + buf.values
    return buf


def ppo_update(buf: RolloutBuffer, params: po.PolicyParams, cfg: TrainConfig,
               adam: tk.Adam, rng) -> dict:
    if buf.advantages is None:
        raise ValueError("compute_gae must run before ppo_update")
    adv = buf.advantages
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    stats = {k: 0.0 for k in ("policy_loss", "value_loss", "entropy",
                              "clip_fraction", "approx_kl")}
    n_mb = 0
    for _ in range(cfg.epochs):
        for e in rng.permutation(cfg.num_envs):
            seg = buf.segment(int(e))
            logp_new, values, ent = po.evaluate(
                buf.visions[seg], buf.gestures[seg], buf.targets[seg],
                buf.actions[seg], buf.resets[seg], buf.initial_hidden[int(e)], params)
            a_c = tk.constant(adv[seg])
            ratio = tk.exp(tk.sub(logp_new, tk.constant(buf.log_probs[seg])))
            surr1 = tk.mul(ratio, a_c)
            surr2 = tk.mul(tk.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), a_c)
            policy_loss = tk.neg(tk.mean(tk.minimum(surr1, surr2)))
            diff = tk.sub(values, tk.constant(buf.returns[seg][:, None]))
            value_loss = tk.mean(tk.mul(diff, diff))
            ent_mean = tk.mean(ent)
            loss = tk.add(tk.add(policy_loss, tk.scale(value_loss, cfg.value_coef)),
                          tk.scale(ent_mean, -cfg.entropy_coef))
            if not np.isfinite(loss.data):
                _dump_nonfinite(buf, params, cfg, float(policy_loss.data),
                                float(value_loss.data), float(ent_mean.data))
            params.zero_grads()
            loss.backward()
            tk.global_norm_clip(params.list(), cfg.grad_clip_norm)
            adam.step()
            rd = ratio.data
            stats["policy_loss"] += float(policy_loss.data)
            stats["value_loss"] += float(value_loss.data)
            stats["entropy"] += float(ent_mean.data)
            stats["clip_fraction"] += float((np.abs(rd - 1.0) > cfg.clip_eps).mean())
            stats["approx_kl"] += float((rd - 1.0 - np.log(rd)).mean())
            n_mb += 1
    return {k: v / n_mb for k, v in stats.items()}


def _dump_nonfinite(buf, params, cfg, pl, vl, ent):
    dump = {
        "policy_loss": pl, "value_loss": vl, "entropy": ent,
        "max_abs_value": float(np.abs(buf.values).max()),
        "max_abs_advantage": float(np.abs(buf.advantages).max()),
        "max_abs_reward": float(np.abs(buf.rewards).max()),
        "param_max": {n: float(np.abs(p.data).max()) for n, p in params.t.items()},
    }
    path = Path("nonfinite_dump.json")
    path.write_text(json.dumps(dump, indent=2))
    raise NonFiniteLoss(f"non-finite loss; diagnostics at {path.resolve()}")


@dataclass
class TrainResult:
    updates: int
    env_steps: int
    checkpoint_path: str
    metrics_path: str
    rolling_sr: float
    wall_s: float


def train(cfg: TrainConfig, scenes: list, condition: str, out_dir,
          config_snapshot: dict | None = None, log=None) -> TrainResult:
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = po.PolicyParams.init(cfg.seed)
    adam = tk.Adam(params.list(), lr=cfg.lr)
    rng_collect = np.random.default_rng([cfg.seed, 21])
    rng_update = np.random.default_rng([cfg.seed, 22])
    collector = Collector(scenes, cfg, condition, rng_collect, params.hidden)
    n_updates = max(1, cfg.total_env_steps // cfg.buffer)
    ckpt_path = out / "checkpoint.bin"
    metrics_path = out / "metrics.jsonl"
    snapshot = dict(config_snapshot or {})
    snapshot.setdefault("train", asdict(cfg))
    snapshot["condition"] = condition
    t0 = time.monotonic()
    last_stats = {}
    with open(metrics_path, "w") as mf:
        for u in range(1, n_updates + 1):
            buf = collector.collect(params)
            compute_gae(buf, cfg.gamma, cfg.gae_lambda)
            last_stats = ppo_update(buf, params, cfg, adam, rng_update)
            if u % 10 == 0 or u == n_updates:
                fin = list(collector.finished)
                row = {
                    "env_steps": u * cfg.buffer,
                    "update": u,
                    "mean_episode_reward": float(np.mean([r for r, _ in fin])) if fin else 0.0,
                    "rolling_sr": float(np.mean([s for _, s in fin])) if fin else 0.0,
                    "episodes": collector.episodes_done,
                    **{k: round(v, 8) for k, v in last_stats.items()},
                    "wall_s": round(time.monotonic() - t0, 3),
                }
                mf.write(json.dumps(row) + "\n")
                mf.flush()
                po.save_checkpoint(ckpt_path, params, snapshot)
                if log:
                    log(row)
    po.save_checkpoint(ckpt_path, params, snapshot)
    fin = list(collector.finished)
    return TrainResult(n_updates, n_updates * cfg.buffer, str(ckpt_path),
                       str(metrics_path),
                       float(np.mean([s for _, s in fin])) if fin else 0.0,
                       time.monotonic() - t0)
