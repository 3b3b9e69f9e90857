"""Cyclone eye tracking on lat-lon fields and track scoring.

A fix is the lowest mean-sea-level-pressure local minimum inside the
continuation disc around the previous fix that also passes the vorticity,
warm-core thickness and (over land) wind criteria.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .meshgraph import great_circle_km

EARTH_RADIUS_M = 6371e3
CHANNELS = ("mslp", "u850", "v850", "u10", "v10", "z850", "z200")


@dataclass
class TrackerConfig:
    vorticity_threshold: float = 5e-5
    search_radius_km: float = 278.0
    continuation_radius_km: float = 445.0
    wind_threshold: float = 8.0
    step_hours: float = 6.0
    extratropical_lat: float = 30.0
    thickness_threshold: float | None = None
    land_mask: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("vorticity_threshold", "search_radius_km", "continuation_radius_km", "wind_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["land_mask"] = None if self.land_mask is None else "supplied"
        return d


@dataclass(frozen=True)
class Fix:
    step: int
    lat: float
    lon: float
    mslp: float


@dataclass
class CycloneTrack:
    fixes: list[Fix]
    termination: str
    termination_step: int | None = None

    def to_dict(self) -> dict:
        return {
            "fixes": [asdict(f) for f in self.fixes],
            "termination": self.termination,
            "termination_step": self.termination_step,
        }

    @property
    def steps(self) -> np.ndarray:
        return np.array([f.step for f in self.fixes], dtype=np.int64)

    @property
    def positions(self) -> np.ndarray:
        return np.array([(f.lat, f.lon) for f in self.fixes], dtype=np.float64).reshape(-1, 2)


# --------------------------------------------------------------------------
# kinematics


def relative_vorticity(u, v, lat, lon) -> np.ndarray:
    """``(1 / (R cos phi)) (dv/dlambda - d(u cos phi)/dphi)`` in s^-1.

    Centred differences; longitude wraps, the first and last rows use
    one-sided differences. ``lat``/``lon`` are 1-D degree arrays with uniform
    spacing.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    phi = np.deg2rad(np.asarray(lat, dtype=np.float64))
    dlam = np.deg2rad(float(lon[1] - lon[0])) if len(lon) > 1 else 2 * np.pi
    cos = np.cos(phi)[:, None]
    dv = (np.roll(v, -1, axis=-1) - np.roll(v, 1, axis=-1)) / (2.0 * dlam)
    uc = u * cos
    du = np.empty_like(uc)
    if len(phi) > 1:
        du[..., 1:-1, :] = (uc[..., 2:, :] - uc[..., :-2, :]) / (phi[2:] - phi[:-2])[:, None]
        du[..., 0, :] = (uc[..., 1, :] - uc[..., 0, :]) / (phi[1] - phi[0])
        du[..., -1, :] = (uc[..., -1, :] - uc[..., -2, :]) / (phi[-1] - phi[-2])
    else:
        du[...] = 0.0
    return (dv - du) / (EARTH_RADIUS_M * cos)


def _disc(lat, lon, center, radius_km) -> np.ndarray:
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    return great_circle_km(la, lo, center[0], center[1]) <= radius_km


def _neighbour_stack(f: np.ndarray) -> np.ndarray:
    """The 8 neighbours of every interior-row point (longitude wraps)."""
    out = []
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            out.append(np.roll(np.roll(f, -di, axis=0), -dj, axis=1))
    return np.stack(out)


def local_extrema(f: np.ndarray, kind: str = "min") -> np.ndarray:
    """Boolean mask of points <= (min) or >= (max) all 8 neighbours; edge rows excluded."""
    nb = _neighbour_stack(f)
    mask = np.all(f[None] <= nb, axis=0) if kind == "min" else np.all(f[None] >= nb, axis=0)
    mask[0, :] = False
    mask[-1, :] = False
    return mask


def local_min_mslp(mslp, lat, lon, center, radius_km):
    """Lowest local minimum within the disc, ties to the smallest (row, col).

    Returns ``((row, col), value)`` or ``None``.
    """
    mslp = np.asarray(mslp, dtype=np.float64)
    cand = local_extrema(mslp, "min") & _disc(lat, lon, center, radius_km)
    if not cand.any():
        return None
    rows, cols = np.nonzero(cand)
    vals = mslp[rows, cols]
    k = np.lexsort((cols, rows, vals))[0]
    return (int(rows[k]), int(cols[k])), float(vals[k])


# --------------------------------------------------------------------------
# tracking


def _as_channels(state) -> dict:
    if isinstance(state, dict):
        return state
    state = np.asarray(state)
    return {name: state[i] for i, name in enumerate(CHANNELS)}


def fix_criteria(ch: dict, lat, lon, pos: tuple[float, float], cfg: TrackerConfig) -> dict:
    """Evaluate each acceptance criterion at a candidate centre; ``None`` = not applicable."""
    disc = _disc(lat, lon, pos, cfg.search_radius_km)
    zeta = relative_vorticity(ch["u850"], ch["v850"], lat, lon)
    sign = 1.0 if pos[0] >= 0 else -1.0
    out = {"vorticity": bool(np.max(sign * zeta[disc]) > cfg.vorticity_threshold)}
    out["thickness"] = None
    if abs(pos[0]) > cfg.extratropical_lat:
        thick = np.asarray(ch["z200"], dtype=np.float64) - np.asarray(ch["z850"], dtype=np.float64)
        if cfg.thickness_threshold is None:
            out["thickness"] = bool(np.any(local_extrema(thick, "max") & disc))
        else:
            out["thickness"] = bool(np.max(thick[disc]) > cfg.thickness_threshold)
    out["wind"] = None
    if cfg.land_mask is not None:
        i = int(np.argmin(np.abs(np.asarray(lat) - pos[0])))
        j = int(np.argmin(np.abs(((np.asarray(lon) - pos[1] + 180.0) % 360.0) - 180.0)))
        if cfg.land_mask[i, j]:
            speed = np.hypot(ch["u10"], ch["v10"])
            out["wind"] = bool(np.max(speed[disc]) > cfg.wind_threshold)
    return out


def track_cyclone(states, lat, lon, init: tuple[float, float], cfg: TrackerConfig | None = None, start_step: int = 0) -> CycloneTrack:
    """Follow a cyclone from ``init`` through ``states[start_step:]``.

    ``states`` is a sequence of [7, H, W] arrays (channel order ``CHANNELS``)
    or of dicts keyed by channel name.
    """
    cfg = cfg or TrackerConfig()
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    dlat = abs(lat[1] - lat[0]) if len(lat) > 1 else 180.0
    if not (lat.min() - dlat / 2 <= init[0] <= lat.max() + dlat / 2) or not np.isfinite(init[1]):
        raise ValueError(f"initial position {init} is outside the grid")
    fixes: list[Fix] = []
    prev = (float(init[0]), float(init[1]))
    for t in range(start_step, len(states)):
        ch = _as_channels(states[t])
        found = local_min_mslp(ch["mslp"], lat, lon, prev, cfg.continuation_radius_km)
        if found is None:
            return CycloneTrack(fixes, "no-minimum", t)
        (i, j), value = found
        pos = (float(lat[i]), float(lon[j]))
        crit = fix_criteria(ch, lat, lon, pos, cfg)
        if not all(v for v in crit.values() if v is not None):
            return CycloneTrack(fixes, "criteria-failed", t)
        fixes.append(Fix(t, pos[0], pos[1], value))
        prev = pos
    return CycloneTrack(fixes, "end-of-data", None)


def check_track(track: CycloneTrack, states, lat, lon, cfg: TrackerConfig | None = None) -> list[str]:
    """Post-hoc audit: every fix respects the continuation bound and all criteria."""
    cfg = cfg or TrackerConfig()
    problems = []
    steps = track.steps
    if len(steps) > 1 and np.any(np.diff(steps) <= 0):
        problems.append("steps not strictly increasing")
    for a, b in zip(track.fixes, track.fixes[1:]):
        d = float(great_circle_km(a.lat, a.lon, b.lat, b.lon))
        if d > cfg.continuation_radius_km:
            problems.append(f"step {b.step}: jump of {d:.1f} km")
    for f in track.fixes:
        crit = fix_criteria(_as_channels(states[f.step]), lat, lon, (f.lat, f.lon), cfg)
        for name, ok in crit.items():
            if ok is False:
                problems.append(f"step {f.step}: {name} criterion fails")
    return problems


def track_position_error(a: CycloneTrack, b: CycloneTrack) -> float:
    """Mean great-circle distance (km) over steps present in both tracks; NaN if none."""
    pa = {f.step: f for f in a.fixes}
    common = [f for f in b.fixes if f.step in pa]
    if not common:
        warnings.warn("tracks share no steps; position error undefined")
        return float("nan")
    d = [float(great_circle_km(pa[f.step].lat, pa[f.step].lon, f.lat, f.lon)) for f in common]
    return float(np.mean(d))
