"""Synthetic spherical dynamics used in place of reanalysis data.

``advection_dataset`` rotates smooth random fields along latitude circles
with a latitude-dependent angular speed and a weak zonal diffusion. The
shift is applied spectrally per row, so it is exact for any fractional
displacement. ``vortex_dataset`` produces a translating cyclone-like
depression with balanced winds and geopotential for the tracker.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .meshgraph import great_circle_km, grid_latlon

@dataclass
class AdvectionConfig:
    """Zonal flow with angular speed ``speed0 + speed1 * cos^2(lat)`` degrees per step."""

    speed0: float = 4.0
    speed1: float = 8.0
    diffusion: float = 1e-3
    max_wavenumber: int = 6
    max_meridional: int = 3
    spectral_slope: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def angular_speed(lat: np.ndarray, cfg: AdvectionConfig) -> np.ndarray:
    """Degrees of longitude travelled per step for each latitude row."""
    c = np.cos(np.deg2rad(lat))
    return cfg.speed0 + cfg.speed1 * c * c


def random_fields(rng: np.random.Generator, h: int, w: int, channels: int, cfg: AdvectionConfig) -> np.ndarray:
    """Smooth multi-harmonic fields [C, H, W], regular at the poles.

    Zonal wavenumber ``k`` carries a ``cos(lat)^k`` envelope times a low-order
    polynomial in ``sin(lat)``; amplitudes fall off as ``(1 + k)^-slope``.
    """
    lat, lon = grid_latlon(h, w)
    phi = np.deg2rad(lat)[:, None]
    lam = np.deg2rad(lon)[None, :]
    out = np.zeros((channels, h, w))
    for c in range(channels):
        for k in range(cfg.max_wavenumber + 1):
            env = np.cos(phi) ** k
            amp = (1.0 + k) ** -cfg.spectral_slope
            for n in range(cfg.max_meridional + 1):
                a, b = rng.normal(size=2) * amp
                out[c] += env * np.sin(phi) ** n * (a * np.cos(k * lam) + b * np.sin(k * lam))
    return out


def advect(field: np.ndarray, lat: np.ndarray, steps: float, cfg: AdvectionConfig) -> np.ndarray:
    """Advance [..., H, W] fields by ``steps`` time steps (may be fractional)."""
    w = field.shape[-1]
    k = np.fft.rfftfreq(w, d=1.0 / w)
    shift = np.deg2rad(angular_speed(lat, cfg))[:, None] * steps
    phase = np.exp(-1j * k[None, :] * shift) * np.exp(-cfg.diffusion * k[None, :] ** 2 * steps)
    return np.fft.irfft(np.fft.rfft(field, axis=-1) * phase, n=w, axis=-1)


def advection_sequence(z0: np.ndarray, steps: int, cfg: AdvectionConfig) -> np.ndarray:
    """[T+1, C, H, W] trajectory starting at ``z0`` (included as element 0)."""
    h, w = z0.shape[-2:]
    lat, _ = grid_latlon(h, w)
    return np.stack([advect(z0, lat, t, cfg) for t in range(steps + 1)])


def advection_dataset(
    h: int,
    w: int,
    steps: int,
    channels: int = 4,
    seed: int = 0,
    cfg: AdvectionConfig | None = None,
    n_trajectories: int = 1,
) -> np.ndarray:
    """``n_trajectories`` independent runs stacked as [N, T+1, C, H, W] (N dropped when 1)."""
    cfg = cfg or AdvectionConfig()
    rng = np.random.default_rng(seed)
    runs = np.stack(
        [advection_sequence(random_fields(rng, h, w, channels, cfg), steps, cfg) for _ in range(n_trajectories)]
    )
    return runs[0] if n_trajectories == 1 else runs


def block_mean(field: np.ndarray, r: int) -> np.ndarray:
    """Average r x r blocks of the last two axes (fine -> coarse)."""
    h, w = field.shape[-2:]
    if h % r or w % r:
        raise ValueError(f"grid {h}x{w} not divisible by {r}")
    f = field.reshape(field.shape[:-2] + (h // r, r, w // r, r))
    return f.mean(axis=(-3, -1))


# --------------------------------------------------------------------------
# translating vortex

VORTEX_CHANNELS = ("mslp", "u850", "v850", "u10", "v10", "z850", "z200")


@dataclass
class VortexConfig:
    lat0: float = 15.0
    lon0: float = 140.0
    dlat: float = 0.0
    dlon: float = 1.5
    depth_hpa: float = 30.0
    radius_km: float = 300.0
    vmax: float = 35.0
    background_hpa: float = 1010.0
    warm_core_m: float = 150.0
    remove_after: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def vortex_center(step: int, cfg: VortexConfig) -> tuple[float, float]:
    lon = (cfg.lon0 + cfg.dlon * step + 180.0) % 360.0 - 180.0
    return cfg.lat0 + cfg.dlat * step, lon


def vortex_state(lat: np.ndarray, lon: np.ndarray, center: tuple[float, float] | None, cfg: VortexConfig) -> np.ndarray:
    """Seven channels [mslp hPa, u850, v850, u10, v10 m/s, z850, z200 m] on a lat-lon grid.

    The depression is Gaussian in great-circle distance; winds are the
    rotational flow of a Gaussian streamfunction (cyclonic in the hemisphere
    of the centre), and the 850-200 hPa thickness has a warm-core bump.
    """
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    out = np.zeros((7,) + la.shape)
    out[0] = cfg.background_hpa
    out[5] = 1500.0
    out[6] = 11800.0
    if center is None:
        return out
    clat, clon = center
    d = great_circle_km(la, lo, clat, clon)
    rad = cfg.radius_km
    bump = np.exp(-0.5 * (d / rad) ** 2)
    out[0] -= cfg.depth_hpa * bump
    # tangential speed of a Gaussian vortex, peak vmax at r = rad
    vt = cfg.vmax * (d / rad) * np.exp(0.5 * (1.0 - (d / rad) ** 2))
    # local east/north offsets from the centre (km)
    dx = np.deg2rad(((lo - clon + 180.0) % 360.0) - 180.0) * 6371.0 * np.cos(np.deg2rad(la))
    dy = np.deg2rad(la - clat) * 6371.0
    r = np.maximum(np.hypot(dx, dy), 1e-9)
    sign = 1.0 if clat >= 0 else -1.0
    out[1] = -sign * vt * dy / r
    out[2] = sign * vt * dx / r
    out[3] = 0.8 * out[1]
    out[4] = 0.8 * out[2]
    out[5] -= cfg.depth_hpa * 8.0 * bump
    out[6] += (cfg.warm_core_m - cfg.depth_hpa * 8.0) * bump
    return out


def vortex_dataset(h: int, w: int, steps: int, cfg: VortexConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Fields [T, 7, H, W] and the analytic centres [T, 2] (NaN once removed)."""
    cfg = cfg or VortexConfig()
    lat, lon = grid_latlon(h, w, lon_range=(-180.0, 180.0))
    fields, centers = [], []
    for t in range(steps):
        gone = cfg.remove_after is not None and t > cfg.remove_after
        c = None if gone else vortex_center(t, cfg)
        fields.append(vortex_state(lat, lon, c, cfg))
        centers.append((np.nan, np.nan) if c is None else c)
    return np.stack(fields), np.asarray(centers)
