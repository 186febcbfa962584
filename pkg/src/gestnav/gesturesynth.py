"""Synthetic gesture channels: 100x95 pose-feature sequences.

A referencing gesture mixes a 3-dim latent [a(t), a(t)cos(b), a(t)sin(b)]
through 95 fixed random tanh units, so the bearing b is present but never
declared. Intervention gestures share the anatomy but use an oscillatory
envelope with zeroed direction components, one template per index.
"""
from __future__ import annotations

import struct

import numpy as np

STEPS = 100
FEATURES = 95
NUM_TEMPLATES = 10
DEFAULT_SIGMA = 0.05
VALUE_CLAMP = 1.5


class IndexOutOfRange(Exception):
    pass


class GestureAnatomy:
    """Fixed random mixing weights, reproducible from the seed.

    Scales are calibrated so a flattened referencing sequence lands near the
    vision features' magnitude once encoded: direction components carry most
    of the variance, envelope/bias stay small. Too-large drawn weights make
    the constant 9500-dim input drown the ray features early in training.
    """

    W_ENV_STD = 0.05
    W_DIR_STD = 0.3
    B_STD = 0.05

    def __init__(self, anatomy_seed: int):
        self.anatomy_seed = int(anatomy_seed)
        rng = np.random.default_rng([self.anatomy_seed, 0])
        self.w = rng.normal(0.0, 1.0, size=(FEATURES, 3))
        self.w[:, 0] *= self.W_ENV_STD
        self.w[:, 1:] *= self.W_DIR_STD
        self.b = rng.normal(0.0, self.B_STD, size=FEATURES)


def _envelope() -> np.ndarray:
    # rise (0-29), hold (30-69), fall (70-99)
    t = np.arange(STEPS, dtype=np.float64)
    a = np.ones(STEPS)
    a[:30] = t[:30] / 29.0
    a[70:] = (99.0 - t[70:]) / 29.0
    return a


_ENVELOPE = _envelope()


def _style(style_seed: int) -> np.ndarray:
    """Smooth per-episode perturbation, amplitude at most 0.1, shape [STEPS, FEATURES]."""
    rng = np.random.default_rng([int(style_seed), 1])
    amp = rng.uniform(0.0, 0.02, size=FEATURES)
    freq = rng.integers(1, 4, size=FEATURES)
    phase = rng.uniform(0.0, 2 * np.pi, size=FEATURES)
    t = np.arange(STEPS)[:, None] / STEPS
    return amp * np.sin(2 * np.pi * freq * t + phase)


def referencing_gesture(bearing: float, anatomy: GestureAnatomy,
                        style_seed: int, noise_sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """100x95 sequence encoding `bearing` (radians, human frame) latently."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    a = _ENVELOPE
    latent = np.stack([a, a * np.cos(bearing), a * np.sin(bearing)], axis=1)  # [T, 3]
    pre = latent @ anatomy.w.T + anatomy.b + _style(style_seed)
    out = np.tanh(pre)
    if noise_sigma > 0:
        rng = np.random.default_rng([anatomy.anatomy_seed, int(style_seed), 2])
        eps = rng.normal(0.0, noise_sigma, size=(STEPS, FEATURES))
        np.clip(eps, -5 * noise_sigma, 5 * noise_sigma, out=eps)
        out = out + eps
    return np.clip(out, -VALUE_CLAMP, VALUE_CLAMP)


def intervention_gesture(index: int, anatomy: GestureAnatomy) -> np.ndarray:
    """One of the ten fixed rejective templates for this anatomy."""
    if not 0 <= int(index) < NUM_TEMPLATES:
        raise IndexOutOfRange(f"template index {index} not in [0, {NUM_TEMPLATES})")
    t = np.arange(STEPS, dtype=np.float64)
    a = np.abs(np.sin(2 * np.pi * 3.0 * t / STEPS))
    latent = np.stack([a, np.zeros(STEPS), np.zeros(STEPS)], axis=1)
    rng = np.random.default_rng([anatomy.anatomy_seed, 1000 + int(index)])
    offset = rng.normal(0.0, 0.5, size=FEATURES)
    pre = latent @ anatomy.w.T + anatomy.b + offset
    return np.clip(np.tanh(pre), -VALUE_CLAMP, VALUE_CLAMP)


_ZERO = np.zeros((STEPS, FEATURES))
_ZERO.flags.writeable = False


def zero_gesture() -> np.ndarray:
    """The all-zero absence marker. Shared read-only array."""
    return _ZERO


# ------------------------------------------------------------ probe oracles

def hold_phase_mean(seq: np.ndarray) -> np.ndarray:
    return seq[30:70].mean(axis=0)


def fit_bearing_probe(features: np.ndarray, bearings: np.ndarray, ridge: float = 1e-3):
    """Ridge regression hold-phase features -> (cos b, sin b). Returns coef [F+1, 2]."""
    X = np.hstack([features, np.ones((features.shape[0], 1))])
    Y = np.stack([np.cos(bearings), np.sin(bearings)], axis=1)
    A = X.T @ X + ridge * np.eye(X.shape[1])
    return np.linalg.solve(A, X.T @ Y)


def decode_bearing(seq: np.ndarray, coef: np.ndarray) -> float:
    f = np.append(hold_phase_mean(seq), 1.0)
    c, s = f @ coef
    return float(np.arctan2(s, c))


# ----------------------------------------------------------- dataset file

MAGIC = b"GESTDATA1"
KIND_REFERENCING = 0.0
KIND_INTERVENTION = 1.0


def write_gesture_dataset(path, records):
    """records: iterable of (seq [100x95], kind, bearing_rad, template_index).

    Layout: magic, uint64 LE count, then per record the sequence as 9500
    little-endian float64 row-major followed by a 3-float64 label record
    (kind, bearing_rad, template_index; -1 where not applicable).
    """
    records = list(records)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(records)))
        for seq, kind, bearing, tidx in records:
            seq = np.ascontiguousarray(seq, dtype="<f8")
            if seq.shape != (STEPS, FEATURES):
                raise ValueError(f"bad sequence shape {seq.shape}")
            f.write(seq.tobytes())
            f.write(struct.pack("<3d", float(kind), float(bearing), float(tidx)))


def read_gesture_dataset(path):
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError("not a gesture dataset file")
        (count,) = struct.unpack("<Q", f.read(8))
        out = []
        for _ in range(count):
            seq = np.frombuffer(f.read(STEPS * FEATURES * 8), dtype="<f8").reshape(STEPS, FEATURES)
            kind, bearing, tidx = struct.unpack("<3d", f.read(24))
            out.append((seq.astype(np.float64), kind, bearing, tidx))
    return out
