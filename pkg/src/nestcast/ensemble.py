"""Perlin-noise initial-condition perturbations and ensemble-mean forecasts."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class PerlinSpec:
    octaves: int = 3
    base_freq: int = 4
    persistence: float = 0.5
    amplitude: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.octaves < 1:
            raise ValueError("octaves must be >= 1")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.base_freq < 1:
            raise ValueError("base_freq must be >= 1")

    def bound(self) -> float:
        """Upper bound on |noise|: amplitude * sum of octave weights."""
        return self.amplitude * sum(self.persistence**k for k in range(self.octaves))

    def to_dict(self) -> dict:
        return asdict(self)


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def gradient_noise(h: int, w: int, fx: int, fy: int, rng: np.random.Generator) -> np.ndarray:
    """One octave of 2-D gradient noise, periodic in longitude.

    The lattice has ``fx`` cells around a latitude circle and ``fy`` cells
    from pole to pole; grid point (i, j) sits at lattice coordinate
    (j * fx / w, i * fy / h), so the noise is exactly zero wherever that is
    an integer pair.
    """
    theta = rng.uniform(0.0, 2.0 * np.pi, size=(fy + 1, fx))
    gx, gy = np.cos(theta), np.sin(theta)
    x = np.arange(w) * fx / w
    y = np.arange(h) * fy / h
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    tx = (x - x0)[None, :]
    ty = (y - y0)[:, None]
    X0 = x0[None, :] % fx
    X1 = (x0[None, :] + 1) % fx
    Y0 = y0[:, None]
    Y1 = y0[:, None] + 1

    def dot(Y, X, dx, dy):
        return gx[Y, X] * dx + gy[Y, X] * dy

    n00 = dot(Y0, X0, tx, ty)
    n10 = dot(Y0, X1, tx - 1.0, ty)
    n01 = dot(Y1, X0, tx, ty - 1.0)
    n11 = dot(Y1, X1, tx - 1.0, ty - 1.0)
    u, v = _fade(tx), _fade(ty)
    a = n00 + u * (n10 - n00)
    b = n01 + u * (n11 - n01)
    return a + v * (b - a)


def perlin2d(h: int, w: int, spec: PerlinSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Fractal sum of octaves; octave k has frequency base_freq * 2^k and weight persistence^k."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    out = np.zeros((h, w))
    if spec.amplitude == 0:
        return out
    fy0 = max(1, round(spec.base_freq * h / w))
    for k in range(spec.octaves):
        f = 2**k
        out += spec.persistence**k * gradient_noise(h, w, spec.base_freq * f, fy0 * f, rng)
    return spec.amplitude * out


def member_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def perturbations(shape: tuple, spec: PerlinSpec, n_members: int) -> np.ndarray:
    """[N, C, H, W] noise, one independent stream per member, one field per channel."""
    c, h, w = shape[-3:]
    out = np.zeros((n_members, c, h, w))
    for m, ss in enumerate(member_seeds(spec.seed, n_members)):
        rng = np.random.default_rng(ss)
        for ch in range(c):
            out[m, ch] = perlin2d(h, w, spec, rng)
    return out


def ensemble_mean(members: np.ndarray, member_ids=None) -> np.ndarray:
    """Mean over axis 0, summed sequentially in ascending member id."""
    members = np.asarray(members)
    order = np.arange(len(members)) if member_ids is None else np.argsort(np.asarray(member_ids), kind="stable")
    acc = np.zeros(members.shape[1:], dtype=np.float64)
    for i in order:
        acc += members[i]
    return acc / len(members)


@dataclass
class EnsembleResult:
    members: np.ndarray
    mean: np.ndarray
    noise: np.ndarray


def ensemble_forecast(model, z0: np.ndarray, spec: PerlinSpec, n_members: int, steps: int) -> EnsembleResult:
    """Roll out every member from ``z0 + noise_n``; members run one at a time."""
    if n_members < 1:
        raise ValueError("n_members must be >= 1")
    z0 = np.asarray(z0)
    noise = perturbations(z0.shape, spec, n_members)
    members = np.zeros((n_members, steps) + z0.shape, dtype=z0.dtype)
    for m in range(n_members):
        z = z0 + noise[m].astype(z0.dtype)
        for t in range(steps):
            z = model(z)
            members[m, t] = z
    mean = ensemble_mean(members).astype(z0.dtype) if steps else np.zeros((0,) + z0.shape, z0.dtype)
    return EnsembleResult(members, mean, noise)
