"""Dense differentiable primitives with hand-written backward passes.

A :class:`Tensor` wraps a numpy array of shape ``(..., rows, cols)``. Leading
axes are an optional batch; every graph reduction acts on the rows axis.
Calling :meth:`Tensor.backward` on a scalar walks the recorded operations in
reverse topological order and accumulates ``grad`` on every tensor that
requires it.
"""

from __future__ import annotations

import json
import os
from collections import OrderedDict
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

LN_EPS = 1e-5


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "path")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, path=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.path = path

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        name = f" {self.path}" if self.path else ""
        return f"Tensor{name}(shape={self.data.shape}, dtype={self.data.dtype})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                k = id(parent)
                grads[k] = pg if k not in grads else grads[k] + pg


def tensor(data, dtype=None) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(np.asarray(data, dtype=dtype))


def _op(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, parents if req else (), backward if req else None)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise and linear


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x W^T + b with W of shape (out, in)."""
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ValueError(f"linear: bias {b.shape} does not match weight {W.shape}")
    y = x.data @ W.data.T
    if b is not None:
        y = y + b.data

    def backward(g):
        gx = g @ W.data if x.requires_grad else None
        g2 = g.reshape(-1, g.shape[-1])
        gW = g2.T @ x.data.reshape(-1, x.shape[-1]) if W.requires_grad else None
        out = [gx, gW]
        if b is not None:
            out.append(g2.sum(axis=0))
        return out

    parents = (x, W) if b is None else (x, W, b)
    return _op(y, parents, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _op(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _op(a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    return _op(a.data * c, (a,), lambda g: (g * c,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form: saturates to exactly 0 and 1, and is cheap for float32
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    y = x.data * s

    def backward(g):
        return (g * s * (1.0 + x.data * (1.0 - s)),)

    return _op(y, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _op(s, (x,), lambda g: (g * s * (1.0 - s),))


def layernorm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = LN_EPS) -> Tensor:
    """Normalise over the last axis, then apply the optional affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat
    if gain is not None:
        y = y * gain.data
    if bias is not None:
        y = y + bias.data

    def backward(g):
        gh = g * gain.data if gain is not None else g
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        out = [gx]
        if gain is not None:
            out.append((g * xhat).reshape(-1, g.shape[-1]).sum(axis=0))
        if bias is not None:
            out.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return out

    parents = (x,) + tuple(p for p in (gain, bias) if p is not None)
    return _op(y, parents, backward)


def concat(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along the feature (last) axis."""
    sizes = [t.shape[-1] for t in xs]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return np.split(g, cuts, axis=-1)

    return _op(np.concatenate([t.data for t in xs], axis=-1), tuple(xs), backward)


def columns(x: Tensor, start: int, stop: int) -> Tensor:
    def backward(g):
        out = np.zeros_like(x.data)
        out[..., start:stop] = g
        return (out,)

    return _op(x.data[..., start:stop], (x,), backward)


# --------------------------------------------------------------------------
# graph primitives


class Segments:
    """Precomputed bookkeeping for reductions of E rows into n segments.

    Summation order inside a segment is ascending input row, so results do
    not depend on anything but the id array.
    """

    def __init__(self, ids, n: int):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1:
            raise ValueError("segment ids must be 1-D")
        if len(ids) and (ids.min() < 0 or ids.max() >= n):
            bad = ids[(ids < 0) | (ids >= n)][0]
            raise IndexError(f"segment id {bad} out of range [0, {n})")
        self.ids = ids
        self.n = int(n)
        self.counts = np.bincount(ids, minlength=n)
        self.order = np.argsort(ids, kind="stable")
        nonempty = np.flatnonzero(self.counts)
        self.nonempty = nonempty
        starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]])
        self.starts = starts[nonempty]
        self.matrix = sparse.csr_matrix(
            (np.ones(len(ids)), (ids, np.arange(len(ids)))), shape=(n, len(ids))
        )

    def __len__(self):
        return len(self.ids)

    def sum(self, values: np.ndarray) -> np.ndarray:
        """Plain (non-differentiable) segment sum along axis -2."""
        lead = values.shape[:-2]
        E, F = values.shape[-2:]
        v = np.moveaxis(values.reshape((-1, E, F)), 0, 1).reshape(E, -1)
        out = self.matrix @ v if E else np.zeros((self.n, v.shape[1]), dtype=values.dtype)
        out = np.asarray(out, dtype=values.dtype).reshape(self.n, -1, F)
        return np.moveaxis(out, 1, 0).reshape(lead + (self.n, F))

    def max(self, values: np.ndarray) -> np.ndarray:
        out = np.full(values.shape[:-2] + (self.n, values.shape[-1]), -np.inf, dtype=values.dtype)
        if len(self.ids):
            srt = np.take(values, self.order, axis=-2)
            out[..., self.nonempty, :] = np.maximum.reduceat(srt, self.starts, axis=-2)
        return out


def as_segments(ids, n) -> Segments:
    return ids if isinstance(ids, Segments) else Segments(ids, n)


def gather(x: Tensor, idx: np.ndarray) -> Tensor:
    """Rows of x at idx (axis -2)."""
    idx = np.asarray(idx)
    n = x.shape[-2]

    def backward(g):
        return (Segments(idx, n).sum(g),)

    return _op(np.take(x.data, idx, axis=-2), (x,), backward)


def gather_seg(x: Tensor, seg: Segments) -> Tensor:
    """Like :func:`gather` but reuses the cached scatter matrix for the backward pass."""
    if x.shape[-2] != seg.n:
        raise ValueError(f"gather: {x.shape[-2]} rows but segments expect {seg.n}")

    def backward(g):
        return (seg.sum(g),)

    return _op(np.take(x.data, seg.ids, axis=-2), (x,), backward)


def segment_sum(values: Tensor, segment_ids, n_segments: int | None = None) -> Tensor:
    seg = as_segments(segment_ids, n_segments)
    if values.shape[-2] != len(seg):
        raise ValueError(f"segment_sum: {values.shape[-2]} rows but {len(seg)} ids")

    def backward(g):
        return (np.take(g, seg.ids, axis=-2),)

    return _op(seg.sum(values.data), (values,), backward)


def segment_softmax(scores: Tensor, segment_ids, n_segments: int | None = None) -> Tensor:
    """Softmax over the rows of each segment, separately per column."""
    seg = as_segments(segment_ids, n_segments)
    m = seg.max(scores.data)
    ex = np.exp(scores.data - np.take(m, seg.ids, axis=-2))
    den = seg.sum(ex)
    y = ex / np.take(den, seg.ids, axis=-2)

    def backward(g):
        s = seg.sum(g * y)
        return (y * (g - np.take(s, seg.ids, axis=-2)),)

    return _op(y, (scores,), backward)


def segment_weighted_sum(weights: Tensor, values: Tensor, segment_ids, n_segments: int | None = None) -> Tensor:
    """out[k] = flatten_h( sum_{i in k} weights[i, h] * values[i] ), head-major.

    weights (..., E, H), values (..., E, D) -> (..., n, H*D).
    """
    seg = as_segments(segment_ids, n_segments)
    a, v = weights.data, values.data
    H, D = a.shape[-1], v.shape[-1]
    prod = (a[..., :, :, None] * v[..., :, None, :]).reshape(a.shape[:-1] + (H * D,))

    def backward(g):
        ge = np.take(g, seg.ids, axis=-2).reshape(a.shape + (D,))
        ga = (ge * v[..., :, None, :]).sum(axis=-1)
        gv = (ge * a[..., :, :, None]).sum(axis=-2)
        return ga, gv

    return _op(seg.sum(prod), (weights, values), backward)


def gated_combine(gates: Tensor, e_upd: Tensor, h_src: Tensor, h_dst: Tensor, n_heads: int) -> Tensor:
    """(1/3) * sum_h (g_e^h * e' + g_s^h * h_s + g_d^h * h_d).

    ``gates`` is (..., E, 3*H*D) laid out [stream][head][D] with streams
    (edge, source, destination). When the feature width F exceeds D the gate
    is tiled F/D times along the feature axis.
    """
    F = e_upd.shape[-1]
    total = gates.shape[-1]
    if total % (3 * n_heads):
        raise ValueError(f"gate width {total} not divisible by 3*{n_heads}")
    D = total // (3 * n_heads)
    if F % D:
        raise ValueError(f"gate dim {D} does not tile feature dim {F}")
    reps = F // D
    g = gates.data.reshape(gates.shape[:-1] + (3, n_heads, D))
    streams = (e_upd.data, h_src.data, h_dst.data)
    head_sum = [np.tile(g[..., s, 0, :], reps) for s in range(3)]
    for h in range(1, n_heads):
        for s in range(3):
            head_sum[s] = head_sum[s] + np.tile(g[..., s, h, :], reps)
    acc = head_sum[0] * streams[0] + head_sum[1] * streams[1]
    y = (acc + head_sum[2] * streams[2]) / 3.0

    def backward(g_out):
        g3 = g_out / 3.0
        gg = np.empty(g.shape, dtype=g_out.dtype)
        grads = []
        for s in range(3):
            gs = (g3 * streams[s]).reshape(g_out.shape[:-1] + (reps, D)).sum(axis=-2)
            gg[..., s, :, :] = gs[..., None, :]
            grads.append(g3 * head_sum[s])
        return [gg.reshape(gates.shape)] + grads

    return _op(y, (gates, e_upd, h_src, h_dst), backward)


def sum_all(x: Tensor) -> Tensor:
    return _op(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


# --------------------------------------------------------------------------
# parameters


class ParamStore:
    """Ordered collection of named parameter leaves."""

    def __init__(self, dtype=np.float64, seed: int = 0):
        self.dtype = np.dtype(dtype)
        self.seed = int(seed)
        self.leaves: "OrderedDict[str, Tensor]" = OrderedDict()
        self._rng = np.random.default_rng(seed)

    def __getitem__(self, path: str) -> Tensor:
        return self.leaves[path]

    def __contains__(self, path):
        return path in self.leaves

    def __iter__(self):
        return iter(self.leaves.values())

    def __len__(self):
        return len(self.leaves)

    def items(self):
        return self.leaves.items()

    def add(self, path: str, value: np.ndarray) -> Tensor:
        if path in self.leaves:
            raise KeyError(f"duplicate parameter {path}")
        t = Tensor(np.asarray(value, dtype=self.dtype).copy(), requires_grad=True, path=path)
        self.leaves[path] = t
        return t

    def uniform(self, path: str, shape, fan_in: int) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return self.add(path, self._rng.uniform(-bound, bound, size=shape))

    def constant(self, path: str, shape, value: float) -> Tensor:
        return self.add(path, np.full(shape, value))

    def zero_grad(self):
        for t in self.leaves.values():
            t.grad = None

    def n_scalars(self) -> int:
        return sum(t.data.size for t in self.leaves.values())

    def copy(self) -> "ParamStore":
        out = ParamStore(self.dtype, self.seed)
        for k, t in self.leaves.items():
            out.add(k, t.data)
        return out

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype, self.seed)
        for k, t in self.leaves.items():
            out.add(k, t.data)
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.leaves.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for k, v in state.items():
            if self.leaves[k].data.shape != v.shape:
                raise ValueError(f"{k}: shape {v.shape} != {self.leaves[k].data.shape}")
            self.leaves[k].data = np.asarray(v, dtype=self.dtype).copy()


def save_params(params: ParamStore, out_dir: str, extra: dict | None = None) -> None:
    """``params.json`` manifest plus one little-endian blob per leaf."""
    os.makedirs(out_dir, exist_ok=True)
    tag = {"float32": "f32le", "float64": "f64le"}[params.dtype.name]
    entries = []
    for i, (path, t) in enumerate(params.items()):
        fname = f"leaf_{i:04d}.bin"
        np.ascontiguousarray(t.data, dtype=params.dtype.newbyteorder("<")).tofile(os.path.join(out_dir, fname))
        entries.append({"path": path, "shape": list(t.shape), "file": fname})
    manifest = {"dtype": tag, "seed": params.seed, "leaves": entries}
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, "params.json"), "w") as f:
        json.dump(manifest, f, indent=1)


def load_params(in_dir: str) -> tuple[ParamStore, dict]:
    with open(os.path.join(in_dir, "params.json")) as f:
        manifest = json.load(f)
    dtype = {"f32le": np.float32, "f64le": np.float64}[manifest["dtype"]]
    params = ParamStore(dtype, manifest.get("seed", 0))
    for e in manifest["leaves"]:
        raw = np.fromfile(os.path.join(in_dir, e["file"]), dtype=np.dtype(dtype).newbyteorder("<"))
        params.add(e["path"], raw.reshape(e["shape"]))
    return params, manifest


# --------------------------------------------------------------------------
# finite-difference check


def grad_check(
    loss_fn: Callable[[], Tensor],
    leaves: Iterable[Tensor],
    eps: float = 1e-6,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-3,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The denominator is ``max(|analytic|, |numeric|, floor * largest |analytic|)``
    so entries whose true gradient is ~0 are compared on an absolute scale.
    With ``max_entries`` each leaf is checked at that many random positions.
    """
    leaves = list(leaves)
    for t in leaves:
        if t.data.dtype != np.float64:
            raise TypeError("grad_check requires float64 leaves")
        t.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in leaves]
    gmax = max((np.abs(a).max() for a in analytic if a.size), default=0.0)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(leaves, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            fp = float(loss_fn().data)
            flat[i] = old - eps
            fm = float(loss_fn().data)
            flat[i] = old
            num = (fp - fm) / (2 * eps)
            ai = a.reshape(-1)[i]
            den = max(abs(ai), abs(num), floor * gmax, 1e-300)
            worst = max(worst, abs(ai - num) / den)
    for t in leaves:
        t.grad = None
    return worst
