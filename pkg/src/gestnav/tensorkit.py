"""Minimal reverse-mode autodiff on float64 numpy arrays.

A Tensor wraps an ndarray plus an optional gradient accumulator. Ops build a
tape of backward closures; ``backward()`` walks the tape in reverse
topological order. Everything is 64-bit; there is no broadcasting beyond what
the ops below explicitly support, and no graph reuse (one backward per tape).
"""
from __future__ import annotations

import numpy as np


class ShapeMismatch(Exception):
    pass


class IndexOutOfRange(Exception):
    pass


def _as_f64(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_f64(data)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without grad requires a scalar")
            grad = np.ones_like(self.data)
        # reverse topological order over the tape
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): _as_f64(grad).copy()}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._backward is None:
                continue
            for parent, pg in node._backward(g):
                if not _needs_grad(parent):
                    continue
                acc = grads.get(id(parent))
                if acc is None:
                    grads[id(parent)] = pg.copy() if pg.base is not None or pg is g else pg
                else:
                    acc += pg


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _wrap(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)


# ---------------------------------------------------------------- basic ops

def add(a: Tensor, b: Tensor) -> Tensor:
    y = a.data + b.data

    def back(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return _wrap(y, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    y = a.data - b.data

    def back(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape)))

    return _wrap(y, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    y = a.data * b.data

    def back(g):
        return ((a, _unbroadcast(g * b.data, a.data.shape)),
                (b, _unbroadcast(g * a.data, b.data.shape)))

    return _wrap(y, (a, b), back)


def scale(a: Tensor, s: float) -> Tensor:
    y = a.data * s

    def back(g):
        return ((a, g * s),)

    return _wrap(y, (a,), back)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    # reduce a broadcast gradient back to the parent's shape
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise ShapeMismatch(f"matmul supports 1D/2D, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    y = a.data @ b.data

    def back(g):
        if a.data.ndim == 1 and b.data.ndim == 1:
            return ((a, g * b.data), (b, g * a.data))
        if a.data.ndim == 1:
            return ((a, b.data @ g), (b, np.outer(a.data, g)))
        if b.data.ndim == 1:
            return ((a, np.outer(g, b.data)), (b, a.data.T @ g))
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return _wrap(y, (a, b), back)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def back(g):
        return ((a, g * (1.0 - y * y)),)

    return _wrap(y, (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_np(a.data)

    def back(g):
        return ((a, g * y * (1.0 - y)),)

    return _wrap(y, (a,), back)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # stable split form: never exponentiates a large positive argument
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)

    def back(g):
        return ((a, g * (a.data > 0.0)),)

    return _wrap(y, (a,), back)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def back(g):
        return ((a, g * y),)

    return _wrap(y, (a,), back)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    y = np.clip(a.data, lo, hi)

    def back(g):
        mask = (a.data >= lo) & (a.data <= hi)
        return ((a, g * mask),)

    return _wrap(y, (a,), back)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    y = np.minimum(a.data, b.data)

    def back(g):
        take_a = a.data <= b.data
        return ((a, g * take_a), (b, g * (~take_a)))

    return _wrap(y, (a, b), back)


def concat(parts: list[Tensor], axis: int = -1) -> Tensor:
    y = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offs = np.cumsum([0] + sizes)

    def back(g):
        out = []
        for p, s, e in zip(parts, offs[:-1], offs[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(s, e)
            out.append((p, g[tuple(idx)]))
        return tuple(out)

    return _wrap(y, tuple(parts), back)


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    y = np.array(a.data.mean())

    def back(g):
        return ((a, np.full_like(a.data, float(g) / n)),)

    return _wrap(y, (a,), back)


def tsum(a: Tensor, axis=None) -> Tensor:
    y = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return ((a, np.full_like(a.data, float(g))),)
        return ((a, np.expand_dims(g, axis) * np.ones_like(a.data)),)

    return _wrap(np.asarray(y), (a,), back)


def neg(a: Tensor) -> Tensor:
    def back(g):
        return ((a, -g),)

    return _wrap(-a.data, (a,), back)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup a[idx] with scatter-add backward. idx is an int array."""
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise IndexOutOfRange(f"row index out of range for shape {a.shape}")
    y = a.data[idx]

    def back(g):
        da = np.zeros_like(a.data)
        np.add.at(da, idx, g)
        return ((a, da),)

    return _wrap(y, (a,), back)


def select_columns(a: Tensor, idx: np.ndarray) -> Tensor:
    """Per-row element pick: y[t] = a[t, idx[t]]. Backward scatters."""
    idx = np.asarray(idx)
    T = a.data.shape[0]
    if idx.shape != (T,):
        raise ShapeMismatch(f"idx {idx.shape} vs rows {T}")
    rows = np.arange(T)
    y = a.data[rows, idx]

    def back(g):
        da = np.zeros_like(a.data)
        da[rows, idx] = g
        return ((a, da),)

    return _wrap(y, (a,), back)


def log_softmax(a: Tensor) -> Tensor:
    """Log-softmax over the last axis, max-subtracted for stability."""
    m = a.data.max(axis=-1, keepdims=True)
    z = a.data - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse

    def back(g):
        p = np.exp(y)
        return ((a, g - p * g.sum(axis=-1, keepdims=True)),)

    return _wrap(y, (a,), back)


# ------------------------------------------------------------- named layers

def linear_forward(W: Tensor, b: Tensor, x: Tensor) -> Tensor:
    """y = W x + b for vector x, or x W^T + b for batched x of shape [B, i]."""
    o, i = W.data.shape
    if b.data.shape != (o,):
        raise ShapeMismatch(f"bias {b.shape} vs W {W.shape}")
    if x.data.ndim == 1:
        if x.data.shape[0] != i:
            raise ShapeMismatch(f"x {x.shape} vs W {W.shape}")
        y = W.data @ x.data + b.data

        def back(g):
            return ((W, np.outer(g, x.data)), (b, g), (x, W.data.T @ g))

        return _wrap(y, (W, b, x), back)
    if x.data.ndim == 2:
        if x.data.shape[1] != i:
            raise ShapeMismatch(f"x {x.shape} vs W {W.shape}")
        y = x.data @ W.data.T + b.data

        def back(g):
            return ((W, g.T @ x.data), (b, g.sum(axis=0)), (x, g @ W.data))

        return _wrap(y, (W, b, x), back)
    raise ShapeMismatch(f"x must be 1D or 2D, got {x.shape}")


def embedding_lookup(table: Tensor, idx: int) -> Tensor:
    if not 0 <= int(idx) < table.data.shape[0]:
        raise IndexOutOfRange(f"id {idx} for table {table.shape}")
    return gather_rows(table, np.asarray(int(idx)))  # 0-d index keeps a flat row


def gru_cell(x: Tensor, h: Tensor, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    """One GRU step. Gate rows of W/U/b are stacked [r; z; n], each d wide.

    r = sigmoid(W_r x + U_r h + b_r)
    z = sigmoid(W_z x + U_z h + b_z)
    n = tanh(W_n x + r * (U_n h) + b_n)
    h' = (1 - z) * n + z * h
    """
    d = h.data.shape[0]
    if W.data.shape != (3 * d, x.data.shape[0]) or U.data.shape != (3 * d, d) or b.data.shape != (3 * d,):
        raise ShapeMismatch(f"gru shapes W{W.shape} U{U.shape} b{b.shape} x{x.shape} h{h.shape}")
    gx = linear_forward(W, b, x)
    gh = matmul(U, h)
    r = sigmoid(add(_rows(gx, 0, d), _rows(gh, 0, d)))
    z = sigmoid(add(_rows(gx, d, 2 * d), _rows(gh, d, 2 * d)))
    n = tanh(add(_rows(gx, 2 * d, 3 * d), mul(r, _rows(gh, 2 * d, 3 * d))))
    one = constant(np.ones(d))
    return add(mul(sub(one, z), n), mul(z, h))


def _rows(a: Tensor, s: int, e: int) -> Tensor:
    y = a.data[s:e]

    def back(g):
        full = np.zeros_like(a.data)
        full[s:e] = g
        return ((a, full),)

    return _wrap(y, (a,), back)


def gru_segment(X: Tensor, h0: Tensor, W: Tensor, U: Tensor, b: Tensor,
                resets: np.ndarray) -> Tensor:
    """Unroll a GRU over X of shape [T, i]; returns hidden states [T, d].

    resets[t] true forces the incoming hidden for step t to zeros (episode
    boundary). Single fused tape node: the input-side projection is one gemm,
    the hidden recurrences are per-step matvecs, and the backward accumulates
    all weight gradients with two gemms.
    """
    T = X.data.shape[0]
    d = h0.data.shape[0]
    Wd, Ud, bd = W.data, U.data, b.data
    GX = X.data @ Wd.T + bd                      # [T, 3d]
    H = np.empty((T, d))
    Hprev = np.empty((T, d))                     # hidden actually fed to step t
    R = np.empty((T, d))
    Z = np.empty((T, d))
    N = np.empty((T, d))
    GHN = np.empty((T, d))                       # U_n h term, needed for dr
    h = h0.data
    for t in range(T):
        hp = np.zeros(d) if resets[t] else h
        Hprev[t] = hp
        gh = Ud @ hp
        R[t] = _sigmoid_np(GX[t, :d] + gh[:d])
        Z[t] = _sigmoid_np(GX[t, d:2 * d] + gh[d:2 * d])
        GHN[t] = gh[2 * d:]
        N[t] = np.tanh(GX[t, 2 * d:] + R[t] * GHN[t])
        h = (1.0 - Z[t]) * N[t] + Z[t] * hp
        H[t] = h

    def back(gH):
        dGX = np.empty((T, 3 * d))
        dGH = np.empty((T, 3 * d))
        dh_next = np.zeros(d)
        for t in range(T - 1, -1, -1):
            dh = gH[t] + dh_next
            hp = Hprev[t]
            dn = dh * (1.0 - Z[t])
            dz = dh * (hp - N[t])
            da_n = dn * (1.0 - N[t] * N[t])
            dr = da_n * GHN[t]
            da_r = dr * R[t] * (1.0 - R[t])
            da_z = dz * Z[t] * (1.0 - Z[t])
            dGX[t, :d] = da_r
            dGX[t, d:2 * d] = da_z
            dGX[t, 2 * d:] = da_n
            dGH[t, :d] = da_r
            dGH[t, d:2 * d] = da_z
            dGH[t, 2 * d:] = da_n * R[t]
            dhp = dh * Z[t] + Ud.T @ dGH[t]
            dh_next = np.zeros(d) if resets[t] else dhp
        dW = dGX.T @ X.data
        dU = dGH.T @ Hprev
        db = dGX.sum(axis=0)
        dX = dGX @ Wd
        dh0 = dh_next if not resets[0] else np.zeros(d)
        return ((X, dX), (h0, dh0), (W, dW), (U, dU), (b, db))

    return _wrap(H, (X, h0, W, U, b), back)


# ------------------------------------------------------------ policy utils

def categorical(logits: np.ndarray, rng) -> tuple[int, float, float]:
    """Sample from softmax(logits); returns (index, log_prob, entropy)."""
    z = logits - logits.max()
    e = np.exp(z)
    p = e / e.sum()
    u = rng.random()
    c = 0.0
    idx = len(p) - 1
    for i, pi in enumerate(p):
        c += pi
        if u < c:
            idx = i
            break
    logp = z - np.log(e.sum())
    entropy = float(-(p * logp).sum())
    return idx, float(logp[idx]), entropy


def softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ------------------------------------------------------------------- Adam

class Adam:
    """Bias-corrected Adam (Kingma & Ba, Algorithm 1) over a parameter list."""

    def __init__(self, params: list[Tensor], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        if any(p.grad is None for p in self.params):
            raise ShapeMismatch("adam step with missing gradients")
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g.shape != p.data.shape:
                raise ShapeMismatch(f"grad {g.shape} vs param {p.data.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t,
                "m": [m.copy() for m in self.m],
                "v": [v.copy() for v in self.v]}

    def load_state_dict(self, d: dict):
        self.t = int(d["t"])
        self.m = [np.array(m, dtype=np.float64) for m in d["m"]]
        self.v = [np.array(v, dtype=np.float64) for v in d["v"]]


def global_norm_clip(params: list[Tensor], max_norm: float) -> float:
    """Scales all grads in place so their joint L2 norm is at most max_norm."""
    sq = 0.0
    for p in params:
        if p.grad is not None:
            sq += float((p.grad * p.grad).sum())
    norm = np.sqrt(sq)
    if norm > max_norm and norm > 0.0:
        s = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= s
    return float(norm)
