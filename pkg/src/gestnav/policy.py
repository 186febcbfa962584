"""Multimodal recurrent actor-critic.

Ray block -> two ReLU layers; flattened gesture -> one ReLU layer; target id
-> embedding row; concatenated and combined, then a GRU carries memory across
steps. Actor and critic heads read the hidden state. Two forward paths exist:
a plain-numpy step for rollouts (no tape) and a taped batched unroll for PPO
re-evaluation; both follow the same arithmetic.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from . import tensorkit as tk
from .simcore import Observation

MAGIC = b"GESTNAV1"

# (name, fan_in description) in checkpoint order
_LAYOUT = (
    "vis_W1", "vis_b1", "vis_W2", "vis_b2",
    "gest_W", "gest_b",
    "emb",
    "comb_W", "comb_b",
    "gru_W", "gru_U", "gru_b",
    "actor_W", "actor_b",
    "critic_W", "critic_b",
)


class CheckpointLoadError(Exception):
    pass


class PolicyParams:
    def __init__(self, tensors: dict[str, tk.Tensor], meta: dict):
        self.t = tensors
        self.meta = dict(meta)

    def list(self) -> list[tk.Tensor]:
        return [self.t[n] for n in _LAYOUT]

    def param_count(self) -> int:
        return sum(p.data.size for p in self.list())

    def zero_grads(self):
        for p in self.list():
            p.zero_grad()

    @classmethod
    def init(cls, seed: int, categories: int = 10, rays: int = 32,
             hidden: int = 256, embed_dim: int = 32) -> "PolicyParams":
        rng = np.random.default_rng([int(seed), 11])
        vis_in = rays * (1 + categories)
        gest_in = 100 * 95
        comb_in = 128 + 128 + embed_dim

        def w(fan_out, fan_in):
            k = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-k, k, size=(fan_out, fan_in))

        t = {
            "vis_W1": w(256, vis_in), "vis_b1": np.zeros(256),
            "vis_W2": w(128, 256), "vis_b2": np.zeros(128),
            "gest_W": w(128, gest_in), "gest_b": np.zeros(128),
            "emb": w(categories, embed_dim),
            "comb_W": w(hidden, comb_in), "comb_b": np.zeros(hidden),
            "gru_W": w(3 * hidden, hidden), "gru_U": w(3 * hidden, hidden),
            "gru_b": np.zeros(3 * hidden),
            "actor_W": w(4, hidden) * 0.01, "actor_b": np.zeros(4),
            "critic_W": w(1, hidden), "critic_b": np.zeros(1),
        }
        tensors = {n: tk.parameter(t[n], name=n) for n in _LAYOUT}
        meta = {"categories": categories, "rays": rays,
                "hidden": hidden, "embed_dim": embed_dim}
        return cls(tensors, meta)

    @property
    def hidden(self) -> int:
        return self.meta["hidden"]


def initial_hidden(params: PolicyParams) -> np.ndarray:
    return np.zeros(params.hidden)


# ------------------------------------------------------- rollout-side numpy

def _relu(x):
    return np.maximum(x, 0.0)


def _features_single(obs: Observation, params: PolicyParams, d) -> np.ndarray:
    v = _relu(d["vis_W1"] @ obs.vision.ravel() + d["vis_b1"])
    v = _relu(d["vis_W2"] @ v + d["vis_b2"])
    g = _relu(d["gest_W"] @ obs.gesture.ravel() + d["gest_b"])
    e = d["emb"][obs.target]
    return _relu(d["comb_W"] @ np.concatenate([v, g, e]) + d["comb_b"])


def _gru_step_np(x, h, W, U, b):
    dh = h.shape[-1]
    gx = W @ x + b
    gh = U @ h
    r = tk._sigmoid_np(gx[:dh] + gh[:dh])
    z = tk._sigmoid_np(gx[dh:2 * dh] + gh[dh:2 * dh])
    n = np.tanh(gx[2 * dh:] + r * gh[2 * dh:])
    return (1.0 - z) * n + z * h


def act(obs: Observation, hidden: np.ndarray, params: PolicyParams,
        rng) -> tuple[int, float, float, np.ndarray]:
    """Sample one action. Returns (action, log_prob, value, new_hidden)."""
    d = {n: p.data for n, p in params.t.items()}
    x = _features_single(obs, params, d)
    h = _gru_step_np(x, hidden, d["gru_W"], d["gru_U"], d["gru_b"])
    logits = d["actor_W"] @ h + d["actor_b"]
    value = float((d["critic_W"] @ h)[0] + d["critic_b"][0])
    a, logp, _ = tk.categorical(logits, rng)
    return a, logp, value, h


def value_of(obs: Observation, hidden: np.ndarray, params: PolicyParams) -> float:
    d = {n: p.data for n, p in params.t.items()}
    x = _features_single(obs, params, d)
    h = _gru_step_np(x, hidden, d["gru_W"], d["gru_U"], d["gru_b"])
    return float((d["critic_W"] @ h)[0] + d["critic_b"][0])


def act_batch(observations, H: np.ndarray, params: PolicyParams, rng,
              gesture_cache: dict):
    """Vectorized act over n parallel envs sharing one rng (sampled in order).

    gesture_cache maps id(gesture array) -> encoded [128] vector; valid for
    one parameter snapshot (callers pass a fresh dict per rollout).
    """
    d = {n: p.data for n, p in params.t.items()}
    n = len(observations)
    VIS = np.stack([o.vision.ravel() for o in observations])
    V = _relu(VIS @ d["vis_W1"].T + d["vis_b1"])
    V = _relu(V @ d["vis_W2"].T + d["vis_b2"])
    G = np.empty((n, d["gest_b"].shape[0]))
    for i, o in enumerate(observations):
        key = id(o.gesture)
        enc = gesture_cache.get(key)
        if enc is None:
            enc = _relu(d["gest_W"] @ o.gesture.ravel() + d["gest_b"])
            gesture_cache[key] = enc
        G[i] = enc
    E = d["emb"][[o.target for o in observations]]
    X = _relu(np.concatenate([V, G, E], axis=1) @ d["comb_W"].T + d["comb_b"])
    dh = params.hidden
    GX = X @ d["gru_W"].T + d["gru_b"]
    GH = H @ d["gru_U"].T
    R = tk._sigmoid_np(GX[:, :dh] + GH[:, :dh])
    Z = tk._sigmoid_np(GX[:, dh:2 * dh] + GH[:, dh:2 * dh])
    N = np.tanh(GX[:, 2 * dh:] + R * GH[:, 2 * dh:])
    H2 = (1.0 - Z) * N + Z * H
    logits = H2 @ d["actor_W"].T + d["actor_b"]
    values = (H2 @ d["critic_W"].T + d["critic_b"]).ravel()
    actions = np.empty(n, dtype=np.int64)
    logps = np.empty(n)
    for i in range(n):
        a, lp, _ = tk.categorical(logits[i], rng)
        actions[i] = a
        logps[i] = lp
    return actions, logps, values, H2


# ------------------------------------------------------------ taped unroll

def encode_observation(obs: Observation, params: PolicyParams) -> tk.Tensor:
    """Taped combiner output for a single observation (unit-test surface)."""
    v = tk.relu(tk.linear_forward(params.t["vis_W1"], params.t["vis_b1"],
                                  tk.constant(obs.vision.ravel())))
    v = tk.relu(tk.linear_forward(params.t["vis_W2"], params.t["vis_b2"], v))
    g = tk.relu(tk.linear_forward(params.t["gest_W"], params.t["gest_b"],
                                  tk.constant(obs.gesture.ravel())))
    e = tk.embedding_lookup(params.t["emb"], obs.target)
    x = tk.concat([v, g, e], axis=0)
    return tk.relu(tk.linear_forward(params.t["comb_W"], params.t["comb_b"], x))


def evaluate(visions: np.ndarray, gestures: list, targets: np.ndarray,
             actions: np.ndarray, resets: np.ndarray, h0: np.ndarray,
             params: PolicyParams):
    """Batched re-evaluation of one contiguous segment.

    visions [T, 352]; gestures: per-step array refs (deduped by identity);
    resets[t] zeroes the hidden fed into step t. Returns taped
    (log_probs [T], values [T, 1], entropies [T]).
    """
    T = visions.shape[0]
    p = params.t
    Xv = tk.constant(visions)
    v = tk.relu(tk.linear_forward(p["vis_W1"], p["vis_b1"], Xv))
    v = tk.relu(tk.linear_forward(p["vis_W2"], p["vis_b2"], v))

    uniq: dict[int, int] = {}
    rows = np.empty(T, dtype=np.int64)
    stack = []
    for t, arr in enumerate(gestures):
        k = id(arr)
        if k not in uniq:
            uniq[k] = len(stack)
            stack.append(arr.ravel())
        rows[t] = uniq[k]
    G = tk.relu(tk.linear_forward(p["gest_W"], p["gest_b"],
                                  tk.constant(np.stack(stack))))
    g = tk.gather_rows(G, rows)
    e = tk.gather_rows(p["emb"], np.asarray(targets))
    X = tk.relu(tk.linear_forward(p["comb_W"], p["comb_b"],
                                  tk.concat([v, g, e], axis=1)))
    H = tk.gru_segment(X, tk.constant(h0), p["gru_W"], p["gru_U"], p["gru_b"],
                       np.asarray(resets, dtype=bool))
    logits = tk.linear_forward(p["actor_W"], p["actor_b"], H)
    values = tk.linear_forward(p["critic_W"], p["critic_b"], H)
    logsoft = tk.log_softmax(logits)
    logp = tk.select_columns(logsoft, np.asarray(actions))
    probs = tk.exp(logsoft)
    ent = tk.neg(tk.tsum(tk.mul(probs, logsoft), axis=1))
    return logp, values, ent


# -------------------------------------------------------------- checkpoints

def save_checkpoint(path, params: PolicyParams, config: dict):
    tensors = []
    offset = 0
    blobs = []
    for name in _LAYOUT:
        arr = np.ascontiguousarray(params.t[name].data, dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "byte_offset": offset})
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    header = json.dumps({"version": 1, "config": config, "meta": params.meta,
                         "tensors": tensors}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


def load_checkpoint(path) -> tuple[PolicyParams, dict]:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointLoadError(f"{path}: bad magic")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        payload = f.read()
    if header.get("version") != 1:
        raise CheckpointLoadError(f"unsupported checkpoint version {header.get('version')}")
    tensors = {}
    for spec_ in header["tensors"]:
        shape = tuple(spec_["shape"])
        n = int(np.prod(shape)) if shape else 1
        off = spec_["byte_offset"]
        arr = np.frombuffer(payload[off:off + 8 * n], dtype="<f8").reshape(shape)
        tensors[spec_["name"]] = tk.parameter(arr, name=spec_["name"])
    missing = [n for n in _LAYOUT if n not in tensors]
    if missing:
        raise CheckpointLoadError(f"missing tensors: {missing}")
    return PolicyParams(tensors, header.get("meta", {})), header.get("config", {})
