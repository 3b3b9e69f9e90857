"""Neural nested grid: drive a high-resolution regional model with a coarse global one.

The regional model sees, as extra input channels, the global forecast for the
next step interpolated onto the regional grid. Channel groups are always in
the order [interior forcing | boundary forcing | regional state].
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .meshgraph import RegionBox


class NestMode(str, enum.Enum):
    NNG = "nng"
    BOUNDARY = "bf"
    NONE = "none"

    @classmethod
    def parse(cls, text) -> "NestMode":
        if isinstance(text, cls):
            return text
        aliases = {"nng": cls.NNG, "bf": cls.BOUNDARY, "boundaryforcing": cls.BOUNDARY, "none": cls.NONE, "noforcing": cls.NONE}
        key = str(text).lower().replace("_", "").replace("-", "")
        if key not in aliases:
            raise ValueError(f"unknown nest mode {text!r}")
        return aliases[key]

    def forcing_groups(self) -> int:
        return {NestMode.NNG: 2, NestMode.BOUNDARY: 1, NestMode.NONE: 0}[self]


@dataclass(frozen=True)
class RegionWindow:
    """Rows [row0, row1) and columns [col0, col1) of the coarse global grid.

    ``col1`` may exceed the grid width to express a window across the seam.
    """

    row0: int
    row1: int
    col0: int
    col1: int
    boundary: int = 2
    refine: int = 4

    def __post_init__(self):
        if self.row1 <= self.row0 or self.col1 <= self.col0:
            raise ValueError("window must be non-empty")
        if self.boundary < 0:
            raise ValueError("boundary width must be >= 0")
        if self.refine < 1:
            raise ValueError("refinement factor must be >= 1")

    @classmethod
    def parse(cls, text: str, boundary: int = 2, refine: int = 4) -> "RegionWindow":
        r0, r1, c0, c1 = (int(v) for v in text.split(","))
        return cls(r0, r1, c0, c1, boundary, refine)

    @property
    def shape(self) -> tuple[int, int]:
        return self.row1 - self.row0, self.col1 - self.col0

    @property
    def fine_shape(self) -> tuple[int, int]:
        h, w = self.shape
        return h * self.refine, w * self.refine

    def domain(self, h: int, w: int) -> RegionBox:
        """Lat-lon box of the window on an h x w global grid (lon from 0)."""
        dlat, dlon = 180.0 / h, 360.0 / w
        lon0 = (self.col0 * dlon) % 360.0
        lon1 = lon0 + (self.col1 - self.col0) * dlon
        return RegionBox(-90.0 + self.row0 * dlat, -90.0 + self.row1 * dlat, lon0, lon1 if lon1 <= 360.0 else lon1 - 360.0)

    def to_dict(self) -> dict:
        return asdict(self)


def _rows_cols(window: RegionWindow, h: int, w: int, width: int):
    if window.row1 - window.row0 > h:
        raise ValueError(f"window of {window.row1 - window.row0} rows is taller than the grid ({h})")
    rows = np.arange(window.row0 - width, window.row1 + width)
    clamped = np.clip(rows, 0, h - 1)
    if np.any(clamped != rows):
        warnings.warn("boundary rows clamped at a pole; duplicated rows in the window")
    cols = np.arange(window.col0 - width, window.col1 + width) % w
    return clamped, cols


def extract_region(field: np.ndarray, window: RegionWindow, include_boundary: bool = False) -> np.ndarray:
    """Subwindow [..., rows, cols]; with the boundary the window grows by its width on all sides."""
    f = np.asarray(field)
    h, w = f.shape[-2:]
    rows, cols = _rows_cols(window, h, w, window.boundary if include_boundary else 0)
    return f[..., rows[:, None], cols[None, :]]


def _interp_axis(a: np.ndarray, r: int, axis: int) -> np.ndarray:
    n = a.shape[axis]
    x = (np.arange(n * r) + 0.5) / r - 0.5
    if n == 1:
        return np.repeat(a, r, axis=axis)
    i0 = np.clip(np.floor(x).astype(np.int64), 0, n - 2)
    t = x - i0
    a0 = np.take(a, i0, axis=axis)
    a1 = np.take(a, i0 + 1, axis=axis)
    shape = [1] * a.ndim
    shape[axis] = len(x)
    t = t.reshape(shape)
    return a0 + t * (a1 - a0)


def upsample_bilinear(coarse: np.ndarray, r: int) -> np.ndarray:
    """Bilinear interpolation in index space onto an r-times finer cell-centred grid.

    Beyond the outermost coarse centres values are extrapolated linearly, so
    affine fields are reproduced exactly everywhere.
    """
    if int(r) != r or r < 1:
        raise ValueError("refinement factor must be a positive integer")
    c = np.asarray(coarse, dtype=np.float64)
    if r == 1:
        return c.copy()
    return _interp_axis(_interp_axis(c, r, -2), r, -1)


def forcing_channels(global_next: np.ndarray, window: RegionWindow, mode: NestMode) -> list[np.ndarray]:
    """Forcing groups on the regional grid for one step.

    interior: upsampled window of the global forecast.
    boundary: upsampled boundary-inclusive window, cropped to the region. In
    boundary-forcing mode the interior coarse cells are zeroed first, so only
    the ring of boundary cells informs this group.
    """
    mode = NestMode.parse(mode)
    r, b = window.refine, window.boundary
    groups = []
    if mode is NestMode.NNG:
        groups.append(upsample_bilinear(extract_region(global_next, window, False), r))
    if mode in (NestMode.NNG, NestMode.BOUNDARY):
        ring = extract_region(global_next, window, True).astype(np.float64)
        if mode is NestMode.BOUNDARY and b > 0:
            ring[..., b:-b, b:-b] = 0.0
        up = upsample_bilinear(ring, r)
        crop = b * r
        if crop:
            up = up[..., crop:-crop, crop:-crop]
        groups.append(up)
    return groups


def build_nest_inputs(global_next, z_region: np.ndarray, window: RegionWindow, mode) -> np.ndarray:
    """Concatenate [interior | boundary | regional state] along the channel axis."""
    mode = NestMode.parse(mode)
    z_region = np.asarray(z_region)
    if z_region.shape[-2:] != window.fine_shape:
        raise ValueError(f"regional state {z_region.shape[-2:]} does not match window {window.fine_shape}")
    if mode is NestMode.NONE:
        return z_region
    g = np.asarray(global_next)
    if g.shape[-3] != z_region.shape[-3]:
        raise ValueError(f"global has {g.shape[-3]} channels, regional state {z_region.shape[-3]}")
    groups = forcing_channels(g, window, mode)
    return np.concatenate([x.astype(z_region.dtype) for x in groups] + [z_region], axis=-3)


def in_channels(mode, n_channels: int) -> int:
    return (NestMode.parse(mode).forcing_groups() + 1) * n_channels


def nng_step(global_model, regional_model, z_global_t, z_region_t, window: RegionWindow, mode, global_next=None):
    """Regional state at t+1; ``global_next`` overrides ``global_model(z_global_t)``."""
    mode = NestMode.parse(mode)
    if mode is NestMode.NONE:
        return regional_model(np.asarray(z_region_t))
    if global_next is None:
        global_next = global_model(z_global_t)
    return regional_model(build_nest_inputs(global_next, z_region_t, window, mode))


def nng_rollout(global_model, regional_model, z_global0, z_region0, window: RegionWindow, mode, steps: int, global_seq=None):
    """Chain :func:`nng_step`; the global state advances by its own rollout.

    ``global_seq[t]`` (if given) is the global state at step t+1 and replaces
    the global model. Returns the regional sequence [T, C, h, w].
    """
    mode = NestMode.parse(mode)
    out = []
    zg = z_global0
    zr = np.asarray(z_region0)
    for t in range(steps):
        if mode is not NestMode.NONE:
            zg = global_seq[t] if global_seq is not None else global_model(zg)
        zr = nng_step(None, regional_model, None, zr, window, mode, global_next=zg)
        out.append(zr)
    if not out:
        return np.zeros((0,) + zr.shape, dtype=zr.dtype)
    return np.stack(out)


def training_pairs(global_seq: np.ndarray, region_seq: np.ndarray, window: RegionWindow, mode):
    """(inputs, targets) for the regional model from aligned trajectories.

    ``global_seq`` [..., T, C, H, W] coarse and ``region_seq`` [..., T, C, h, w]
    fine; the forcing for t -> t+1 is the global state at t+1.
    """
    g = np.asarray(global_seq)
    r = np.asarray(region_seq)
    if g.ndim == 4:
        g, r = g[None], r[None]
    x = build_nest_inputs(g[:, 1:], r[:, :-1], window, mode)
    y = r[:, 1:]
    return x.reshape((-1,) + x.shape[2:]), y.reshape((-1,) + y.shape[2:])
