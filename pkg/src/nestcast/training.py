"""Normalisation, losses, optimisers and the one-step training loop.

Models are trained in normalised units: ``normalize`` subtracts the
per-channel mean and divides by the per-channel (population) standard
deviation fitted on the training fields.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensorcore as tc
from .network import Forecaster, field_to_nodes
from .tensorcore import ParamStore, Tensor

STD_FLOOR = 1e-8
EPS_DEN = 1e-6


# --------------------------------------------------------------------------
# normalisation


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_norm(fields: np.ndarray) -> NormStats:
    """Per-channel mean and population std over every axis except the channel axis (-3)."""
    x = np.asarray(fields, dtype=np.float64)
    x = np.moveaxis(x, -3, 0).reshape(x.shape[-3], -1)
    mean = x.mean(axis=1)
    std = x.std(axis=1)
    low = std < STD_FLOOR
    if low.any():
        warnings.warn(f"channels {np.flatnonzero(low).tolist()} have ~zero variance; std clamped to {STD_FLOOR}")
        std = np.where(low, STD_FLOOR, std)
    return NormStats(mean, std)


def normalize(z: np.ndarray, stats: NormStats) -> np.ndarray:
    return (z - stats.mean[:, None, None]) / stats.std[:, None, None]


def denormalize(z: np.ndarray, stats: NormStats) -> np.ndarray:
    return z * stats.std[:, None, None] + stats.mean[:, None, None]


# --------------------------------------------------------------------------
# losses


def relative_l2_loss(pred, target, eps_den: float = EPS_DEN):
    """Pointwise relative squared error ``mean((p - x)^2 / (x^2 + eps))``.

    Works on numpy arrays or on a :class:`Tensor` prediction (then returns a
    differentiable scalar).
    """
    if isinstance(pred, Tensor):
        t = np.asarray(target, dtype=pred.data.dtype)
        if pred.shape != t.shape:
            raise ValueError(f"shape mismatch {pred.shape} vs {t.shape}")
        w = 1.0 / ((t * t + eps_den) * t.size)
        d = pred.data - t
        return tc._op(np.asarray((d * d * w).sum()), (pred,), lambda g: (2.0 * g * d * w,))
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2 / (target**2 + eps_den)))


def norm_ratio_loss(pred, target):
    """``||p - x||^2 / ||x||^2`` per sample, averaged over leading (batch) axes.

    The norms are taken over the last three axes (nodes/channels or C, H, W).
    """
    if isinstance(pred, Tensor):
        t = np.asarray(target, dtype=pred.data.dtype)
        if pred.shape != t.shape:
            raise ValueError(f"shape mismatch {pred.shape} vs {t.shape}")
        axes = tuple(range(t.ndim - 2, t.ndim)) if t.ndim >= 2 else None
        n = t.size // max(1, int(np.prod([t.shape[a] for a in axes])))
        den = (t * t).sum(axis=axes, keepdims=True) * n
        d = pred.data - t
        return tc._op(np.asarray((d * d / den).sum()), (pred,), lambda g: (2.0 * g * d / den,))
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    axes = tuple(range(target.ndim - 3, target.ndim))
    return float(np.mean(((pred - target) ** 2).sum(axis=axes) / (target**2).sum(axis=axes)))


LOSSES = {"norm_ratio": norm_ratio_loss, "relative_l2": relative_l2_loss}


# --------------------------------------------------------------------------
# optimisers and schedule


def cosine_lr(step: int, total: int, lr0: float, lr_min: float = 0.0) -> float:
    """Cosine annealing from ``lr0`` at step 0 to ``lr_min`` at step ``total - 1``."""
    if total <= 1:
        return lr0
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / (total - 1)))


class SGDMomentum:
    def __init__(self, params: ParamStore, momentum: float = 0.9):
        self.params = params
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self, lr: float):
        for k, t in self.params.items():
            if t.grad is None:
                continue
            v = self.velocity[k]
            v *= self.momentum
            v += t.grad
            t.data -= lr * v


class Adam:
    def __init__(self, params: ParamStore, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)


OPTIMIZERS = {"sgd": SGDMomentum, "adam": Adam}


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    steps: int = 200
    lr0: float = 1e-3
    lr_min: float = 0.0
    batch_size: int = 8
    seed: int = 0
    optimizer: str = "sgd"
    momentum: float = 0.9
    loss: str = "norm_ratio"
    dtype: str = "float32"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr0 < 0:
            raise ValueError("lr0 must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: ParamStore
    losses: np.ndarray
    lrs: np.ndarray


def make_pairs(seq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(inputs, targets) from [T, C, H, W] or [N, T, C, H, W] trajectories."""
    seq = np.asarray(seq)
    if seq.ndim == 4:
        seq = seq[None]
    x = seq[:, :-1].reshape((-1,) + seq.shape[2:])
    y = seq[:, 1:].reshape((-1,) + seq.shape[2:])
    return x, y


def train(model: Forecaster, inputs: np.ndarray, targets: np.ndarray, cfg: TrainConfig) -> TrainResult:
    """One-step supervised training on normalised (input, target) pairs.

    Batches are drawn with a generator seeded by ``cfg.seed``; with the same
    model initialisation and data the run is bit-reproducible.
    """
    if inputs.shape[0] != targets.shape[0]:
        raise ValueError("inputs and targets differ in sample count")
    dtype = np.dtype(cfg.dtype)
    if model.params.dtype != dtype:
        model.params = model.params.astype(dtype)
    params = model.params
    opt = SGDMomentum(params, cfg.momentum) if cfg.optimizer == "sgd" else Adam(params)
    loss_fn = LOSSES[cfg.loss]
    tgt_nodes = field_to_nodes(np.asarray(targets, dtype=dtype))
    inputs = np.asarray(inputs, dtype=dtype)
    rng = np.random.default_rng(cfg.seed)
    n = inputs.shape[0]
    bs = min(cfg.batch_size, n)
    losses = np.empty(cfg.steps)
    lrs = np.empty(cfg.steps)
    for step in range(cfg.steps):
        idx = np.sort(rng.choice(n, size=bs, replace=False))
        params.zero_grad()
        out = model.forward_nodes(inputs[idx])
        loss = loss_fn(out, tgt_nodes[idx])
        value = float(loss.data)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite loss at step {step}")
        loss.backward()
        lr = cosine_lr(step, cfg.steps, cfg.lr0, cfg.lr_min)
        opt.step(lr)
        losses[step] = value
        lrs[step] = lr
    params.zero_grad()
    return TrainResult(params, losses, lrs)


def moving_average(x: np.ndarray, k: int = 10) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if len(x) < k:
        return np.array([x.mean()]) if len(x) else x
    c = np.cumsum(np.concatenate([[0.0], x]))
    return (c[k:] - c[:-k]) / k


# --------------------------------------------------------------------------
# inference


def rollout(model, z0: np.ndarray, steps: int) -> np.ndarray:
    """Feed each forecast back as the next input; returns [T, ...] (z0 excluded)."""
    z0 = np.asarray(z0)
    out = []
    z = z0
    for _ in range(steps):
        z = model(z)
        out.append(z)
    if not out:
        return np.zeros((0,) + z0.shape, dtype=z0.dtype)
    return np.stack(out)


def predict(model: Forecaster, z: np.ndarray, batch: int = 64) -> np.ndarray:
    """One-step forecasts for a stack of inputs, evaluated in chunks."""
    z = np.asarray(z, dtype=model.params.dtype)
    return np.concatenate([model(z[i : i + batch]) for i in range(0, len(z), batch)])


# --------------------------------------------------------------------------
# checkpoints


def save_model(model: Forecaster, out_dir: str, stats: NormStats | None = None, extra: dict | None = None) -> None:
    """Parameters plus everything needed to rebuild the model and its graph."""
    meta = {"network": model.cfg.to_dict(), "graph": model.graph.config}
    if stats is not None:
        meta["norm"] = stats.to_dict()
    if extra:
        meta.update(extra)
    tc.save_params(model.params, out_dir, meta)


def load_model(in_dir: str, graph=None) -> tuple[Forecaster, NormStats | None, dict]:
    from .meshgraph import graph_from_config
    from .network import NetworkConfig

    params, manifest = tc.load_params(in_dir)
    cfg = NetworkConfig(**manifest["network"])
    if graph is None:
        graph = graph_from_config(manifest["graph"])
    stats = NormStats.from_dict(manifest["norm"]) if "norm" in manifest else None
    return Forecaster(cfg, graph, params), stats, manifest
