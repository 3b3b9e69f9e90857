"""Verification metrics and spectral diagnostics.

Fields are arrays whose last three axes are (channel, lat, lon); every metric
returns one value per channel (plus any leading axes). Latitude weights are
normalised to sum to the number of rows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .meshgraph import grid_latlon

RATE_CLAMP = 1e-9


# --------------------------------------------------------------------------
# point metrics


def lat_weights(h: int, lat: np.ndarray | None = None) -> np.ndarray:
    """``L(i) = H cos(lat_i) / sum cos(lat)`` for cell-centre latitudes."""
    if lat is None:
        lat, _ = grid_latlon(h, 1)
    c = np.cos(np.deg2rad(np.asarray(lat, dtype=np.float64)))
    return h * c / c.sum()


def _weights_for(field: np.ndarray, weights) -> np.ndarray:
    h = field.shape[-2]
    w = lat_weights(h) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (h,):
        raise ValueError(f"weights shape {w.shape} does not match {h} rows")
    return w


def rmse(pred, truth, weights=None) -> np.ndarray:
    """Latitude-weighted RMSE over (lat, lon); shape = pred.shape[:-2]."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    w = _weights_for(truth, weights)
    return np.sqrt((w[:, None] * (pred - truth) ** 2).mean(axis=(-2, -1)))


def acc(pred, truth, clim, weights=None) -> np.ndarray:
    """Latitude-weighted anomaly correlation; NaN (with a warning) when an anomaly norm is 0."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    clim = np.asarray(clim, dtype=np.float64)
    w = _weights_for(truth, weights)[:, None]
    pa = pred - clim
    ta = truth - clim
    num = (w * pa * ta).sum(axis=(-2, -1))
    den = np.sqrt((w * pa * pa).sum(axis=(-2, -1)) * (w * ta * ta).sum(axis=(-2, -1)))
    bad = den == 0
    if np.any(bad):
        warnings.warn("ACC undefined for a zero anomaly norm; reported as NaN")
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(bad, np.nan, num / np.where(bad, 1.0, den))
    return np.clip(out, -1.0, 1.0)


def climatology(fields: np.ndarray) -> np.ndarray:
    """Per-channel, per-gridpoint mean over all leading (time/sample) axes."""
    f = np.asarray(fields, dtype=np.float64)
    return f.reshape((-1,) + f.shape[-3:]).mean(axis=0)


# --------------------------------------------------------------------------
# extreme-event scores


@dataclass(frozen=True)
class ContingencyCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("contingency counts must be non-negative")


def extreme_threshold(truth: np.ndarray, q: float = 90.0) -> np.ndarray:
    """Per-channel ``q``-th percentile of the truth over all other axes."""
    t = np.moveaxis(np.asarray(truth, dtype=np.float64), -3, 0)
    return np.percentile(t.reshape(t.shape[0], -1), q, axis=1)


def contingency(pred, truth, threshold) -> list[ContingencyCounts]:
    """Exceedance (value > threshold) counts per channel."""
    p = np.moveaxis(np.asarray(pred), -3, 0)
    t = np.moveaxis(np.asarray(truth), -3, 0)
    thr = np.broadcast_to(np.asarray(threshold, dtype=np.float64), (p.shape[0],))
    out = []
    for c in range(p.shape[0]):
        pe = p[c] > thr[c]
        te = t[c] > thr[c]
        out.append(
            ContingencyCounts(
                int(np.sum(pe & te)), int(np.sum(pe & ~te)), int(np.sum(~pe & te)), int(np.sum(~pe & ~te))
            )
        )
    return out


def csi(c: ContingencyCounts) -> float:
    den = c.tp + c.fp + c.fn
    if den == 0:
        warnings.warn("CSI undefined with no events forecast or observed; reported as NaN")
        return float("nan")
    return c.tp / den


def sedi_rates(c: ContingencyCounts) -> tuple[float, float]:
    """(F, H) with F = FP / (FP + TP) and H = TP / (TP + FN)."""
    f = c.fp / (c.fp + c.tp) if c.fp + c.tp else 0.0
    h = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    return f, h


def sedi(c: ContingencyCounts) -> float:
    f, h = sedi_rates(c)
    fc = min(max(f, RATE_CLAMP), 1.0 - RATE_CLAMP)
    hc = min(max(h, RATE_CLAMP), 1.0 - RATE_CLAMP)
    if fc != f or hc != h:
        warnings.warn("SEDI rate at 0 or 1; clamped to [1e-9, 1 - 1e-9]")
    lf, lh, l1f, l1h = np.log(fc), np.log(hc), np.log1p(-fc), np.log1p(-hc)
    return float((lf - lh - l1f + l1h) / (lf + lh + l1f + l1h))


# --------------------------------------------------------------------------
# graph spectra


def adjacency_from_edges(edges: np.ndarray, n: int) -> np.ndarray:
    """Symmetric 0/1 adjacency of an undirected view of ``edges`` (self loops dropped)."""
    a = np.zeros((n, n))
    e = np.asarray(edges)
    a[e[:, 0], e[:, 1]] = 1.0
    a[e[:, 1], e[:, 0]] = 1.0
    np.fill_diagonal(a, 0.0)
    return a


def graph_laplacian(adjacency) -> np.ndarray:
    """Symmetric normalised Laplacian ``I - D^-1/2 A D^-1/2``.

    Accepts a dense adjacency matrix or any object with ``mesh_edges`` and
    ``n_mesh`` (the mesh of an :class:`EarthGraph`). Isolated nodes get a zero row.
    """
    if hasattr(adjacency, "mesh_edges"):
        adjacency = adjacency_from_edges(adjacency.mesh_edges, adjacency.n_mesh)
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ValueError("adjacency must be symmetric")
    d = a.sum(axis=1)
    inv = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    lap = -inv[:, None] * a * inv[None, :]
    lap[np.diag_indices_from(lap)] += (d > 0).astype(np.float64)
    return lap


def eigendecompose(lap: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and orthonormal eigenvectors (columns)."""
    lap = np.asarray(lap, dtype=np.float64)
    if not np.allclose(lap, lap.T, atol=1e-12):
        raise ValueError("Laplacian must be symmetric")
    lam, u = np.linalg.eigh(lap)
    return lam, u


def frequency_response(operator, lam: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``rho_i = |u_i^T G u_i|`` for a matrix or a callable acting on columns."""
    if callable(operator):
        gu = operator(u)
    else:
        gu = np.asarray(operator, dtype=np.float64) @ u
    return np.abs(np.einsum("ni,ni->i", u, gu))


def gated_operator(lap: np.ndarray, eps: float = 0.01, scale: float = 1.0) -> np.ndarray:
    """Linear surrogate of the three-stream update with spectral gates.

    Each stream is gated by ``g(L) = scale * U diag(|lambda - 1| + eps) U^T``;
    the edge stream carries differences (``L``), the source stream
    neighbour means (``I - L``) and the destination stream the node itself.
    """
    lam, u = eigendecompose(lap)
    g = (u * (scale * (np.abs(lam - 1.0) + eps))) @ u.T
    n = lap.shape[0]
    eye = np.eye(n)
    return g @ (lap + (eye - lap) + eye) / 3.0


@dataclass(frozen=True)
class HighPassResult:
    alpha: float
    kappa: float
    status: str

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def verify_highpass(rho, lam, tol: float = 1e-9) -> HighPassResult:
    """Fit the largest ``alpha``, ``kappa`` with ``rho >= alpha |lam - 1|`` and ``rho >= kappa lam``."""
    rho = np.asarray(rho, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    ma = np.abs(lam - 1.0) > tol
    mk = lam > tol
    if not ma.any() or not mk.any():
        return HighPassResult(float("nan"), float("nan"), "inconclusive")
    alpha = float(np.min(rho[ma] / np.abs(lam[ma] - 1.0)))
    kappa = float(np.min(rho[mk] / lam[mk]))
    return HighPassResult(alpha, kappa, "pass" if alpha > 0 and kappa > 0 else "fail")


def random_regular_adjacency(n: int, degree: int, rng: np.random.Generator) -> np.ndarray:
    """Connected random ``degree``-regular graph via networkx."""
    import networkx as nx

    for _ in range(100):
        g = nx.random_regular_graph(degree, n, seed=int(rng.integers(2**31)))
        if nx.is_connected(g):
            return nx.to_numpy_array(g, nodelist=range(n))
    raise RuntimeError("could not draw a connected regular graph")


# --------------------------------------------------------------------------
# zonal spectra


def zonal_spectrum(field, weights=None) -> np.ndarray:
    """One-sided power per zonal wavenumber, latitude-weighted over rows.

    Normalised so that the sum over wavenumbers equals the latitude-weighted
    mean square of the field. Shape: field.shape[:-2] + (W // 2 + 1,).
    """
    f = np.asarray(field, dtype=np.float64)
    w_lon = f.shape[-1]
    wts = _weights_for(f, weights)
    coef = np.fft.rfft(f, axis=-1) / w_lon
    p = np.abs(coef) ** 2
    p[..., 1:] *= 2.0
    if w_lon % 2 == 0:
        p[..., -1] /= 2.0
    return (wts[:, None] * p).mean(axis=-2)


def spectral_error(pred, truth, weights=None, rtol: float = 1e-10) -> np.ndarray:
    """``|P_pred - P_truth| / P_truth`` per wavenumber.

    Wavenumbers where the truth power is below ``rtol`` times its total power
    are round-off, not signal, and come back as NaN.
    """
    return _relative_power_error(zonal_spectrum(pred, weights), zonal_spectrum(truth, weights), rtol)


def _relative_power_error(pp, pt, rtol):
    live = pt > rtol * pt.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(live, np.abs(pp - pt) / np.where(live, pt, 1.0), np.nan)


def high_wavenumber_error(pred, truth, weights=None, fraction: float = 1.0 / 3.0, rtol: float = 1e-10) -> float:
    """Mean spectral error over the top ``fraction`` of wavenumbers (excluding k = 0).

    Spectra are averaged over every leading (sample) axis before the relative
    error is taken, so weak single-sample bins do not dominate. The result is
    averaged over channels.
    """
    pp = zonal_spectrum(pred, weights)
    pt = zonal_spectrum(truth, weights)
    pp = pp.reshape((-1,) + pp.shape[-2:]).mean(axis=0)
    pt = pt.reshape((-1,) + pt.shape[-2:]).mean(axis=0)
    err = _relative_power_error(pp, pt, rtol)
    nk = err.shape[-1]
    start = max(1, int(np.floor(nk * (1.0 - fraction))))
    return float(np.nanmean(err[..., start:]))
