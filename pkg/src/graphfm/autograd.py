"""A small tape-based reverse-mode autodiff over 2-D numpy arrays.

Every op appends a record to the calling thread's tape; ``backward`` walks
the tape in reverse and clears it. Only what an op needs for its backward
pass is kept in ``saved``; that list is also what activation-memory
accounting counts.
"""
from __future__ import annotations

import os
import struct
import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import NumericError

_state = threading.local()
_f64_override: Optional[bool] = None


def use_float64(flag: Optional[bool]) -> None:
    """Force 64-bit (True), 32-bit (False) or environment-selected (None) precision."""
    global _f64_override
    _f64_override = flag


def default_dtype():
    if _f64_override is not None:
        return np.float64 if _f64_override else np.float32
    return np.float64 if os.environ.get("GRAPHFM_F64", "0") == "1" else np.float32


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "name", "_is_leaf")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        v = np.asarray(value)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(1, -1)
        if v.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {v.shape}")
        if not np.issubdtype(v.dtype, np.floating):
            v = v.astype(default_dtype())
        self.value = v
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._is_leaf = True

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{', name=' + self.name if self.name else ''})"

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(self, o)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(self, o)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, o): return matmul(self, o)
    def __truediv__(self, o):
        if isinstance(o, Tensor):
            raise TypeError("division by a tensor is not supported; use scalar division")
        return mul(self, 1.0 / o)
    def __pow__(self, k): return power(self, k)

    @property
    def T(self):
        return transpose(self)


def parameter(value, name: str = "") -> Tensor:
    return Tensor(np.array(value, dtype=default_dtype()), requires_grad=True, name=name)


class _Record:
    __slots__ = ("out", "parents", "backward", "saved")

    def __init__(self, out, parents, backward, saved):
        self.out = out
        self.parents = parents
        self.backward = backward
        self.saved = saved


class Tape:
    def __init__(self):
        self.records: List[_Record] = []

    def __len__(self):
        return len(self.records)

    def clear(self):
        self.records.clear()

    def activation_bytes(self) -> int:
        """Bytes of distinct arrays retained for backward, excluding parameters."""
        seen = set()
        total = 0
        for r in self.records:
            for s in r.saved:
                if isinstance(s, Tensor):
                    if s._is_leaf and s.requires_grad:
                        continue
                    s = s.value
                if id(s) in seen:
                    continue
                seen.add(id(s))
                total += s.nbytes
        return total


def get_tape() -> Tape:
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = _state.tape = Tape()
    return tape


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=default_dtype()))


def _make(value: np.ndarray, parents: Sequence[Tensor], backward: Callable, saved=()) -> Tensor:
    out = Tensor(value)
    needs = _grad_enabled() and any(p.requires_grad for p in parents)
    if needs:
        out.requires_grad = True
        out._is_leaf = False
        get_tape().records.append(_Record(out, tuple(parents), backward, list(saved)))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every parameter that ``loss`` depends on."""
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.value).all():
        raise NumericError("non-finite loss")
    tape = get_tape()
    if not loss.requires_grad:
        tape.clear()
        return
    loss.grad = np.ones_like(loss.value)
    for rec in reversed(tape.records):
        g = rec.out.grad
        if g is None:
            continue
        grads = rec.backward(g)
        for p, pg in zip(rec.parents, grads):
            if pg is None or not p.requires_grad:
                continue
            pg = _unbroadcast(pg, p.shape)
            if p.grad is None:
                p.grad = np.array(pg, dtype=p.value.dtype, copy=True)
            else:
                p.grad += pg
        rec.out.grad = None
    tape.clear()


# -- elementwise & linear algebra ------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def bw(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)
    saved = [t for t, other in ((a, b), (b, a)) if other.requires_grad]
    return _make(av @ bv, (a, b), bw, saved)


def spmm(adj: sp.spmatrix, x) -> Tensor:
    """Sparse (constant) times dense tensor."""
    x = _as_tensor(x)
    if adj.shape[1] != x.shape[0]:
        raise ValueError(f"spmm shape mismatch: adjacency {adj.shape} vs dense {x.shape}")

    # the product keeps the tensor's precision even when the adjacency is stored in 64-bit
    def bw(g):
        return (np.asarray(adj.T @ g).astype(g.dtype, copy=False),)
    return _make(np.asarray(adj @ x.value).astype(x.value.dtype, copy=False), (x,), bw)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value

    def bw(g):
        return (g * bv if a.requires_grad else None, g * av if b.requires_grad else None)
    saved = [t for t, other in ((a, b), (b, a)) if other.requires_grad]
    return _make(av * bv, (a, b), bw, saved)


def power(x, k: float) -> Tensor:
    x = _as_tensor(x)
    xv = x.value
    return _make(xv ** k, (x,), lambda g: (g * k * xv ** (k - 1),), [x])


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.value)
    return _make(out, (x,), lambda g: (g * out,), [out])


def log(x) -> Tensor:
    x = _as_tensor(x)
    xv = x.value
    return _make(np.log(xv), (x,), lambda g: (g / xv,), [x])


def transpose(x) -> Tensor:
    x = _as_tensor(x)
    return _make(x.value.T.copy(), (x,), lambda g: (g.T,))


def sum(x, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - mirrors numpy
    x = _as_tensor(x)
    shape = x.shape
    out = x.value.sum() if axis is None else x.value.sum(axis=axis, keepdims=True)
    return _make(np.asarray(out).reshape(1, 1) if axis is None else out, (x,),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x, axis: Optional[int] = None) -> Tensor:
    x = _as_tensor(x)
    n = x.value.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / n)


# -- activations -------------------------------------------------------------

def relu(x) -> Tensor:
    x = _as_tensor(x)
    xv = x.value
    return _make(np.maximum(xv, 0), (x,), lambda g: (g * (xv > 0),), [x])


def leaky_relu(x, negative_slope: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    xv = x.value
    return _make(np.where(xv > 0, xv, negative_slope * xv), (x,),
                 lambda g: (np.where(xv > 0, g, negative_slope * g),), [x])


def prelu(x, weight) -> Tensor:
    """PReLU with a learnable slope of shape (1, 1) or (1, cols)."""
    x, w = _as_tensor(x), _as_tensor(weight)
    xv, wv = x.value, w.value
    pos = xv > 0

    def bw(g):
        gx = np.where(pos, g, g * wv)
        gw = np.where(pos, 0.0, g * xv)
        return gx, gw
    return _make(np.where(pos, xv, wv * xv), (x, w), bw, [x])


def elu(x, alpha: float = 1.0) -> Tensor:
    x = _as_tensor(x)
    xv = x.value
    neg = alpha * (np.exp(np.minimum(xv, 0)) - 1)
    out = np.where(xv > 0, xv, neg)
    return _make(out, (x,), lambda g: (np.where(xv > 0, g, g * (neg + alpha)),), [x])


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = expit(x.value)
    return _make(out, (x,), lambda g: (g * out * (1 - out),), [out])


def activation(name: str, x, weight=None) -> Tensor:
    if name == "relu":
        return relu(x)
    if name == "prelu":
        return prelu(x, weight)
    if name == "elu":
        return elu(x)
    if name in ("identity", "none"):
        return x
    raise ValueError(f"unknown activation {name!r}")


def dropout(x, p: float, rng: Optional[np.random.Generator], training: bool = True) -> Tensor:
    """Inverted dropout; a no-op outside training."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout probability must be in [0, 1], got {p}")
    x = _as_tensor(x)
    if not training or p == 0.0:
        return x
    if p == 1.0:
        scale = np.zeros_like(x.value)
    else:
        scale = (rng.random(x.shape) >= p).astype(x.value.dtype) / (1.0 - p)
    return _make(x.value * scale, (x,), lambda g: (g * scale,), [scale])


# -- normalizations ----------------------------------------------------------

def row_l2_normalize(x, eps: float = 1e-12) -> Tensor:
    x = _as_tensor(x)
    xv = x.value
    norm = np.sqrt((xv * xv).sum(axis=1, keepdims=True))
    denom = np.maximum(norm, eps)
    y = xv / denom

    def bw(g):
        # below eps the denominator is constant
        inside = norm > eps
        proj = (g * y).sum(axis=1, keepdims=True)
        return (np.where(inside, (g - y * proj) / denom, g / denom),)
    return _make(y, (x,), bw, [y, denom])


def column_standardize(x, eps: float = 1e-8) -> Tensor:
    """Zero-mean, unit-variance columns (population variance)."""
    x = _as_tensor(x)
    xv = x.value
    n = xv.shape[0]
    mu = xv.mean(axis=0, keepdims=True)
    std = np.sqrt(((xv - mu) ** 2).mean(axis=0, keepdims=True) + eps)
    y = (xv - mu) / std

    def bw(g):
        gm = g.mean(axis=0, keepdims=True)
        gy = (g * y).mean(axis=0, keepdims=True)
        return ((g - gm - y * gy) / std,)
    return _make(y, (x,), bw, [y, std])


def logsumexp_rows(x) -> Tensor:
    x = _as_tensor(x)
    xv = x.value
    m = xv.max(axis=1, keepdims=True)
    e = np.exp(xv - m)
    s = e.sum(axis=1, keepdims=True)
    soft = e / s
    return _make(m + np.log(s), (x,), lambda g: (g * soft,), [soft])


def bce_with_logits(logits, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on raw logits."""
    x = _as_tensor(logits)
    xv = x.value
    t = np.asarray(targets, dtype=xv.dtype).reshape(xv.shape)
    loss = np.maximum(xv, 0) - xv * t + np.log1p(np.exp(-np.abs(xv)))
    n = xv.size

    def bw(g):
        s = expit(xv)
        return (g * (s - t) / n,)
    return _make(np.asarray(loss.mean()).reshape(1, 1), (x,), bw, [x])


# -- indexing ----------------------------------------------------------------

def _selector(idx: np.ndarray, n: int, dtype) -> sp.csr_matrix:
    m = len(idx)
    return sp.csr_matrix((np.ones(m, dtype=dtype), (np.arange(m), idx)), shape=(m, n))


def index_rows(x, idx) -> Tensor:
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]

    def bw(g):
        return (np.asarray(_selector(idx, n, g.dtype).T @ g),)
    return _make(x.value[idx], (x,), bw)


def slice_rows(x, stop: int) -> Tensor:
    x = _as_tensor(x)
    if stop == x.shape[0]:
        return x
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:stop] = g
        return (full,)
    return _make(x.value[:stop], (x,), bw)


def slice_cols(x, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)
    return _make(x.value[:, start:stop], (x,), bw)


def concat_cols(xs: Sequence) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))
    return _make(np.concatenate([x.value for x in xs], axis=1), xs, bw)


# -- graph attention primitives ---------------------------------------------

def segment_softmax(scores, indptr: np.ndarray) -> Tensor:
    """Softmax of an (E, 1) score column within CSR row segments."""
    s = _as_tensor(scores)
    sv = s.value[:, 0]
    counts = np.diff(indptr)
    seg = np.repeat(np.arange(len(counts)), counts)
    nz = counts > 0
    starts = indptr[:-1][nz]
    mx = np.full(len(counts), -np.inf, dtype=sv.dtype)
    if len(sv):
        mx[nz] = np.maximum.reduceat(sv, starts)
    e = np.exp(sv - mx[seg])
    tot = np.zeros(len(counts), dtype=sv.dtype)
    if len(sv):
        tot[nz] = np.add.reduceat(e, starts)
    y = e / tot[seg]

    def bw(g):
        gy = g[:, 0] * y
        acc = np.zeros(len(counts), dtype=g.dtype)
        if len(gy):
            acc[nz] = np.add.reduceat(gy, starts)
        return ((gy - y * acc[seg])[:, None],)
    return _make(y[:, None], (s,), bw, [y])


def edge_weighted_sum(weights, h, indptr: np.ndarray, indices: np.ndarray, n_out: int) -> Tensor:
    """out[r] = sum over stored (r, c) of w_rc * h[c], weights ordered as CSR entries."""
    w, h = _as_tensor(weights), _as_tensor(h)
    wv, hv = w.value[:, 0], h.value
    mat = sp.csr_matrix((wv, indices, indptr), shape=(n_out, h.shape[0]))
    rows = np.repeat(np.arange(n_out), np.diff(indptr))

    def bw(g):
        gw = (g[rows] * hv[indices]).sum(axis=1, keepdims=True) if w.requires_grad else None
        gh = np.asarray(mat.T @ g) if h.requires_grad else None
        return gw, gh
    saved = ([h] if w.requires_grad else []) + ([wv] if h.requires_grad else [])
    return _make(np.asarray(mat @ hv), (w, h), bw, saved)


# -- initialization, optimizer, checkpoints ------------------------------------

def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, name: str = "") -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), name)


def zeros(rows: int, cols: int, name: str = "") -> Tensor:
    return parameter(np.zeros((rows, cols)), name)


class Adam:
    """Adam with weight decay folded into the gradient as an L2 term."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p in self.params:
            if p.grad is None:
                raise ValueError(f"parameter {p.name or p.shape} has no gradient")
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


_MAGIC = b"GFMC"
_VERSION = 1


def save_checkpoint(path, params: Dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(params)))
        for name, arr in params.items():
            arr = np.asarray(arr, dtype="<f8")
            if arr.ndim != 2:
                raise ValueError(f"checkpoint arrays must be 2-D, {name} has shape {arr.shape}")
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<QQ", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        rows, cols = struct.unpack_from("<QQ", data, pos)
        pos += 16
        size = rows * cols * 8
        out[name] = np.frombuffer(data[pos:pos + size], dtype="<f8").reshape(rows, cols).copy()
        pos += size
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes after {count} parameters")
    return out
