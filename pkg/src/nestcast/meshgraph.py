"""Icosahedral multi-scale meshes and the grid/mesh graph used by the model.

Everything here is a pure function of its inputs. Vertex coordinates live on
the unit sphere; lat/lon are in degrees.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

EARTH_RADIUS_KM = 6371.0
G2M_RADIUS_FACTOR = 0.6
_INSIDE_TOL = 1e-12


# --------------------------------------------------------------------------
# coordinates


def latlon_to_xyz(lat, lon) -> np.ndarray:
    """Degrees -> unit vectors, shape (..., 3)."""
    lat = np.deg2rad(np.asarray(lat, dtype=np.float64))
    lon = np.deg2rad(np.asarray(lon, dtype=np.float64))
    c = np.cos(lat)
    return np.stack([c * np.cos(lon), c * np.sin(lon), np.sin(lat)], axis=-1)


def xyz_to_latlon(xyz) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors -> (lat, lon) in degrees, lon in [-180, 180), lon=0 at poles."""
    xyz = np.asarray(xyz, dtype=np.float64)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    lat = np.rad2deg(np.arctan2(z, np.hypot(x, y)))
    lon = np.rad2deg(np.arctan2(y, x))
    lon = np.where(lon >= 180.0, lon - 360.0, lon)
    lon = np.where(np.abs(lat) >= 90.0 - 1e-12, 0.0, lon)
    return lat, lon


def arc_length(a, b) -> np.ndarray:
    """Great-circle angle (radians) between unit vectors, stable for tiny angles."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.arctan2(cross, dot)


def great_circle_km(lat1, lon1, lat2, lon2):
    """Haversine distance in km on a sphere of radius 6371 km. Broadcasts."""
    p1, p2 = np.deg2rad(lat1), np.deg2rad(lat2)
    dp = p2 - p1
    dl = np.deg2rad(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dp / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    d = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    return float(d) if np.ndim(d) == 0 else d


@dataclass(frozen=True)
class RegionBox:
    """Lat-lon box in degrees. ``lon_min > lon_max`` means the box wraps the dateline."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not self.lat_min < self.lat_max:
            raise ValueError(f"empty latitude range: {self.lat_min} .. {self.lat_max}")
        if self.lon_min == self.lon_max:
            raise ValueError("empty longitude range")

    @classmethod
    def parse(cls, text: str) -> "RegionBox":
        lat0, lat1, lon0, lon1 = (float(v) for v in text.split(","))
        return cls(lat0, lat1, lon0, lon1)

    def contains(self, lat, lon) -> np.ndarray:
        lat = np.asarray(lat)
        lon = (np.asarray(lon) + 180.0) % 360.0 - 180.0
        lo = (self.lon_min + 180.0) % 360.0 - 180.0
        hi = (self.lon_max + 180.0) % 360.0 - 180.0
        in_lat = (lat >= self.lat_min) & (lat <= self.lat_max)
        if self.lon_max - self.lon_min >= 360.0:
            in_lon = np.ones(np.shape(lon), dtype=bool)
        elif lo <= hi:
            in_lon = (lon >= lo) & (lon <= hi)
        else:
            in_lon = (lon >= lo) | (lon <= hi)
        return in_lat & in_lon

    def as_list(self) -> list[float]:
        return [self.lat_min, self.lat_max, self.lon_min, self.lon_max]


# --------------------------------------------------------------------------
# triangle meshes


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3) float64, unit norm
    faces: np.ndarray  # (F, 3) int64, counter-clockwise seen from outside
    level: int = 0

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def edges(self) -> np.ndarray:
        """Undirected edges as sorted (i, j) pairs, i < j, lexicographically ordered."""
        return _face_edges(self.faces)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges()) + self.n_faces


def _face_edges(faces: np.ndarray) -> np.ndarray:
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


def _orient_outward(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    normal = np.cross(b - a, c - a)
    flip = np.sum(normal * (a + b + c), axis=1) < 0
    faces = faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def icosahedron() -> TriMesh:
    """Regular icosahedron with a vertex at each pole, edges ordered deterministically."""
    ring_lat = np.rad2deg(np.arctan(0.5))
    lats = [90.0] + [ring_lat] * 5 + [-ring_lat] * 5 + [-90.0]
    lons = [0.0] + [72.0 * k for k in range(5)] + [36.0 + 72.0 * k for k in range(5)] + [0.0]
    vertices = latlon_to_xyz(lats, lons)
    faces = []
    for k in range(5):
        u0, u1 = 1 + k, 1 + (k + 1) % 5
        l0, l1 = 6 + k, 6 + (k + 1) % 5
        faces += [(0, u0, u1), (u0, l0, u1), (u1, l0, l1), (11, l1, l0)]
    faces = _orient_outward(vertices, np.array(faces, dtype=np.int64))
    return TriMesh(vertices, faces, level=0)


def subdivide(mesh: TriMesh) -> TriMesh:
    """Split every face 1-to-4. Parent vertices stay a prefix of the child vertex list."""
    faces = mesh.faces
    edges = mesh.edges()
    n = mesh.n_vertices
    mid = mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]]
    mid /= np.linalg.norm(mid, axis=1, keepdims=True)
    vertices = np.concatenate([mesh.vertices, mid])

    # edges are lexicographically sorted, so their scalar keys are ascending
    keys = edges[:, 0] * n + edges[:, 1]

    def m(a, b):
        k = np.minimum(a, b) * n + np.maximum(a, b)
        return n + np.searchsorted(keys, k)

    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    ab, bc, ca = m(a, b), m(b, c), m(c, a)
    children = np.stack(
        [
            np.stack([a, ab, ca], 1),
            np.stack([b, bc, ab], 1),
            np.stack([c, ca, bc], 1),
            np.stack([ab, bc, ca], 1),
        ],
        axis=1,
    ).reshape(-1, 3)
    return TriMesh(vertices, children, level=mesh.level + 1)


def icosphere(level: int) -> list[TriMesh]:
    """Meshes for levels 0..level (inclusive)."""
    meshes = [icosahedron()]
    for _ in range(level):
        meshes.append(subdivide(meshes[-1]))
    return meshes


@dataclass
class RefinedMesh:
    """Result of region refinement: a non-conforming mesh plus the new edges."""

    mesh: TriMesh
    refined_edges: np.ndarray  # undirected child edges of refined faces, (E, 2)
    n_refined_faces: int


def refine_region(mesh: TriMesh, boxes: RegionBox | Sequence[RegionBox]) -> RefinedMesh:
    """Split once every face whose centroid lies in any box.

    Midpoints are shared between adjacent refined faces. Where a refined face
    borders an unrefined one the midpoint is a hanging node; the unrefined face
    is left as is.
    """
    if isinstance(boxes, RegionBox):
        boxes = [boxes]
    faces = mesh.faces
    cen = mesh.vertices[faces].sum(axis=1)
    cen /= np.linalg.norm(cen, axis=1, keepdims=True)
    clat, clon = xyz_to_latlon(cen)
    sel = np.zeros(len(faces), dtype=bool)
    for box in boxes:
        sel |= box.contains(clat, clon)
    if not sel.any():
        return RefinedMesh(
            TriMesh(mesh.vertices.copy(), faces.copy(), mesh.level), np.zeros((0, 2), np.int64), 0
        )

    vertices = [mesh.vertices]
    n = mesh.n_vertices
    mids: dict[tuple[int, int], int] = {}

    def midpoint(i: int, j: int) -> int:
        nonlocal n
        k = (i, j) if i < j else (j, i)
        if k not in mids:
            p = mesh.vertices[i] + mesh.vertices[j]
            vertices.append((p / np.linalg.norm(p))[None])
            mids[k] = n
            n += 1
        return mids[k]

    kept = faces[~sel]
    children = []
    for a, b, c in faces[sel].tolist():
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        children += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    children = np.array(children, dtype=np.int64)
    new_faces = np.concatenate([kept, children])
    refined_edges = _face_edges(children)
    out = TriMesh(np.concatenate(vertices), new_faces, mesh.level)
    return RefinedMesh(out, refined_edges, int(sel.sum()))


# --------------------------------------------------------------------------
# point location


def _triple(a, b, p):
    return np.einsum("...i,...i->...", np.cross(a, b), p)


def point_in_face(vertices: np.ndarray, faces: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Boolean mask over faces containing unit vector p (boundary inclusive)."""
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    return (
        (_triple(a, b, p) >= -_INSIDE_TOL)
        & (_triple(b, c, p) >= -_INSIDE_TOL)
        & (_triple(c, a, p) >= -_INSIDE_TOL)
        & (np.sum((a + b + c) * p, axis=-1) > 0)
    )


def locate_points(vertices: np.ndarray, faces: np.ndarray, points: np.ndarray, k: int = 12) -> np.ndarray:
    """Index of the containing face for each point.

    Points on a shared edge or vertex go to the face with the lexicographically
    smallest sorted vertex triple.
    """
    cen = vertices[faces].sum(axis=1)
    cen /= np.linalg.norm(cen, axis=1, keepdims=True)
    k = min(k, len(faces))
    _, cand = cKDTree(cen).query(points, k=k)
    cand = np.asarray(cand).reshape(len(points), k)
    fkey = np.sort(faces, axis=1)
    # rank faces by sorted triple once, then the tie-break is a min over ranks
    rank = np.empty(len(faces), dtype=np.int64)
    rank[np.lexsort(fkey.T[::-1])] = np.arange(len(faces))

    a, b, c = (vertices[faces[cand, j]] for j in range(3))
    p = points[:, None, :]
    inside = (
        (_triple(a, b, p) >= -_INSIDE_TOL)
        & (_triple(b, c, p) >= -_INSIDE_TOL)
        & (_triple(c, a, p) >= -_INSIDE_TOL)
        & (np.sum((a + b + c) * p, axis=-1) > 0)
    )
    big = np.iinfo(np.int64).max
    r = np.where(inside, rank[cand], big)
    best = np.argmin(r, axis=1)
    out = cand[np.arange(len(points)), best]
    missing = ~inside.any(axis=1)
    for i in np.flatnonzero(missing):
        hit = np.flatnonzero(point_in_face(vertices, faces, points[i]))
        if len(hit) == 0:
            raise RuntimeError(f"point {i} not inside any face")
        out[i] = hit[np.argmin(rank[hit])]
    return out


# --------------------------------------------------------------------------
# the earth graph


def grid_latlon(h: int, w: int, lat_range=(-90.0, 90.0), lon_range=(0.0, 360.0)):
    """Cell-centre coordinates (lat[h], lon[w]) of an equiangular grid."""
    dlat = (lat_range[1] - lat_range[0]) / h
    dlon = (lon_range[1] - lon_range[0]) / w
    lat = lat_range[0] + (np.arange(h) + 0.5) * dlat
    lon = lon_range[0] + (np.arange(w) + 0.5) * dlon
    return lat, lon


def edge_features(pos_s: np.ndarray, pos_r: np.ndarray) -> np.ndarray:
    """(arc length, dx, dy, dz) with the difference taken sender minus receiver."""
    length = arc_length(pos_s, pos_r)
    return np.concatenate([length[:, None], pos_s - pos_r], axis=1)


def node_features(lat, lon) -> np.ndarray:
    lat = np.deg2rad(lat)
    lon = np.deg2rad(lon)
    return np.stack([np.cos(lat), np.sin(lon), np.cos(lon)], axis=1)


def _bidirectional(und: np.ndarray) -> np.ndarray:
    if len(und) == 0:
        return np.zeros((0, 2), np.int64)
    return np.concatenate([und, und[:, ::-1]])


def _sort_edges(e: np.ndarray) -> np.ndarray:
    """Canonical order: by receiver, then sender."""
    if len(e) == 0:
        return e.reshape(0, 2).astype(np.int64)
    e = np.unique(e, axis=0)
    return e[np.lexsort((e[:, 0], e[:, 1]))].astype(np.int64)


@dataclass
class EarthGraph:
    """Grid nodes, mesh nodes and the edge sets connecting them.

    Edge arrays are (E, 2) int64 of (sender, receiver). For ``g2m`` senders are
    grid indices and receivers mesh indices; ``m2g`` is the reverse.
    """

    grid_lat: np.ndarray
    grid_lon: np.ndarray
    mesh_xyz: np.ndarray
    mesh_edges_by_level: list[np.ndarray]
    region_refined_edges: np.ndarray
    g2m: np.ndarray
    m2g: np.ndarray
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mesh_edges_by_level = [_sort_edges(e) for e in self.mesh_edges_by_level]
        self.region_refined_edges = _sort_edges(self.region_refined_edges)
        self.g2m = _sort_edges(self.g2m)
        self.m2g = _sort_edges(self.m2g)
        sets = self.mesh_edges_by_level + [self.region_refined_edges]
        self.mesh_edges = _sort_edges(np.concatenate(sets)) if sets else np.zeros((0, 2), np.int64)
        self.grid_xyz = latlon_to_xyz(
            np.repeat(self.grid_lat, len(self.grid_lon)), np.tile(self.grid_lon, len(self.grid_lat))
        )
        mlat, mlon = xyz_to_latlon(self.mesh_xyz)
        self.grid_node_feats = node_features(
            np.repeat(self.grid_lat, len(self.grid_lon)), np.tile(self.grid_lon, len(self.grid_lat))
        )
        self.mesh_node_feats = node_features(mlat, mlon)
        self.mesh_edge_feats = edge_features(
            self.mesh_xyz[self.mesh_edges[:, 0]], self.mesh_xyz[self.mesh_edges[:, 1]]
        )
        self.g2m_feats = edge_features(self.grid_xyz[self.g2m[:, 0]], self.mesh_xyz[self.g2m[:, 1]])
        self.m2g_feats = edge_features(self.mesh_xyz[self.m2g[:, 0]], self.grid_xyz[self.m2g[:, 1]])

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.grid_lat), len(self.grid_lon)

    @property
    def n_grid(self) -> int:
        return len(self.grid_lat) * len(self.grid_lon)

    @property
    def n_mesh(self) -> int:
        return len(self.mesh_xyz)

    def counts(self) -> dict:
        return {
            "grid_nodes": self.n_grid,
            "mesh_nodes": self.n_mesh,
            "mesh_edges": len(self.mesh_edges),
            "mesh_edges_by_level": [len(e) for e in self.mesh_edges_by_level],
            "region_refined_edges": len(self.region_refined_edges),
            "g2m_edges": len(self.g2m),
            "m2g_edges": len(self.m2g),
        }

    def without_region_refinement(self) -> "EarthGraph":
        """Ablation: the same nodes with the region-refined edges removed."""
        return EarthGraph(
            self.grid_lat,
            self.grid_lon,
            self.mesh_xyz,
            self.mesh_edges_by_level,
            np.zeros((0, 2), np.int64),
            self.g2m,
            self.m2g,
            dict(self.config, region_edges_removed=True),
        )


def build_earth_graph(
    h: int,
    w: int,
    levels: int,
    regions: Sequence[RegionBox] = (),
    *,
    g2m_factor: float = G2M_RADIUS_FACTOR,
    domain: RegionBox | None = None,
) -> EarthGraph:
    """Build the multi-scale, region-refined graph for an h x w cell-centred grid.

    With ``domain`` set the grid covers only that box (a limited-area graph)
    and the mesh keeps just the faces needed around it.
    """
    if h <= 0 or w <= 0:
        raise ValueError(f"grid must be non-empty, got {h}x{w}")
    if levels < 0:
        raise ValueError("levels must be >= 0")
    meshes = icosphere(levels)
    finest = meshes[-1]
    finest_len = float(np.mean(arc_length(*(finest.vertices[finest.edges().T]))))
    refined = refine_region(finest, list(regions))
    mesh = refined.mesh

    if domain is None:
        lat, lon = grid_latlon(h, w)
    else:
        lon_hi = domain.lon_max if domain.lon_max > domain.lon_min else domain.lon_max + 360.0
        lat, lon = grid_latlon(h, w, (domain.lat_min, domain.lat_max), (domain.lon_min, lon_hi))
    grid_xyz = latlon_to_xyz(np.repeat(lat, w), np.tile(lon, h))

    mesh_xyz = mesh.vertices
    faces = mesh.faces
    level_edges = [_bidirectional(m.edges()) for m in meshes]
    ref_edges = _bidirectional(refined.refined_edges)

    face_of = locate_points(mesh_xyz, faces, grid_xyz)

    if domain is not None:
        # limited area: keep faces near the grid, then re-index vertices
        radius = 2.0 * finest_len
        cen = mesh_xyz[faces].sum(axis=1)
        cen /= np.linalg.norm(cen, axis=1, keepdims=True)
        tree = cKDTree(grid_xyz)
        d, _ = tree.query(cen, k=1)
        keep_face = d <= 2.0 * np.sin(radius / 2.0)
        keep_face[face_of] = True
        keep_v = np.zeros(len(mesh_xyz), dtype=bool)
        keep_v[faces[keep_face].ravel()] = True
        new_id = -np.ones(len(mesh_xyz), dtype=np.int64)
        new_id[keep_v] = np.arange(keep_v.sum())

        def restrict(e):
            ok = keep_v[e[:, 0]] & keep_v[e[:, 1]]
            return new_id[e[ok]]

        level_edges = [restrict(e) for e in level_edges]
        ref_edges = restrict(ref_edges)
        old_faces = faces
        faces = new_id[faces[keep_face]]
        face_map = -np.ones(len(old_faces), dtype=np.int64)
        face_map[keep_face] = np.arange(keep_face.sum())
        face_of = face_map[face_of]
        mesh_xyz = mesh_xyz[keep_v]

    # mesh2grid: three vertices of the containing face
    m2g = np.stack([faces[face_of].ravel(), np.repeat(np.arange(len(grid_xyz)), 3)], axis=1)

    # grid2mesh: all mesh nodes within the radius; nearest as fallback
    radius = g2m_factor * finest_len
    tree = cKDTree(mesh_xyz)
    chord = 2.0 * np.sin(radius / 2.0) * (1 + 1e-9)
    hits = tree.query_ball_point(grid_xyz, chord)
    senders, receivers = [], []
    fallback = 0
    for gi, hs in enumerate(hits):
        hs = np.array(sorted(hs), dtype=np.int64)
        if len(hs):
            hs = hs[arc_length(grid_xyz[gi], mesh_xyz[hs]) <= radius]
        if len(hs) == 0:
            hs = np.array([tree.query(grid_xyz[gi])[1]], dtype=np.int64)
            fallback += 1
        senders.append(np.full(len(hs), gi))
        receivers.append(hs)
    g2m = np.stack([np.concatenate(senders), np.concatenate(receivers)], axis=1)

    cfg = {
        "h": h,
        "w": w,
        "levels": levels,
        "regions": [r.as_list() for r in regions],
        "domain": domain.as_list() if domain is not None else None,
        "g2m_factor": g2m_factor,
        "finest_edge_arc": finest_len,
        "g2m_radius": radius,
        "g2m_nearest_fallbacks": fallback,
        "refined_faces": refined.n_refined_faces,
    }
    return EarthGraph(lat, lon, mesh_xyz, level_edges, ref_edges, g2m, m2g, cfg)


# --------------------------------------------------------------------------
# serialization


def _write_array(path: str, arr: np.ndarray, dtype: str):
    np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tofile(path)


def _read_array(path: str, dtype: str, shape) -> np.ndarray:
    arr = np.fromfile(path, dtype=np.dtype(dtype).newbyteorder("<"))
    return arr.reshape(shape).astype(np.dtype(dtype).newbyteorder("="))


def save_graph(graph: EarthGraph, out_dir: str) -> None:
    """Write ``graph.json`` plus flat little-endian arrays, row-major."""
    os.makedirs(out_dir, exist_ok=True)
    arrays = {
        "grid_lat.f64": (graph.grid_lat, "f8"),
        "grid_lon.f64": (graph.grid_lon, "f8"),
        "mesh_nodes.f64": (graph.mesh_xyz, "f8"),
        "mesh_nodes.f32": (graph.mesh_xyz, "f4"),
        "mesh_node_feats.f32": (graph.mesh_node_feats, "f4"),
        "grid_node_feats.f32": (graph.grid_node_feats, "f4"),
        "edges_r.u32": (graph.region_refined_edges, "u4"),
        "edge_feats_r.f32": (
            edge_features(
                graph.mesh_xyz[graph.region_refined_edges[:, 0]],
                graph.mesh_xyz[graph.region_refined_edges[:, 1]],
            ),
            "f4",
        ),
        "g2m.u32": (graph.g2m, "u4"),
        "m2g.u32": (graph.m2g, "u4"),
        "edge_feats_g2m.f32": (graph.g2m_feats, "f4"),
        "edge_feats_m2g.f32": (graph.m2g_feats, "f4"),
    }
    for k, e in enumerate(graph.mesh_edges_by_level):
        arrays[f"edges_l{k}.u32"] = (e, "u4")
        arrays[f"edge_feats_l{k}.f32"] = (
            edge_features(graph.mesh_xyz[e[:, 0]], graph.mesh_xyz[e[:, 1]]),
            "f4",
        )
    shapes = {}
    for name, (arr, dt) in arrays.items():
        _write_array(os.path.join(out_dir, name), arr, dt)
        shapes[name] = list(np.shape(arr))
    meta = {
        "format": "nestcast-graph/1",
        "counts": graph.counts(),
        "config": graph.config,
        "feature_dims": {"grid_node": 3, "mesh_node": 3, "edge": 4},
        "arrays": shapes,
        "n_levels": len(graph.mesh_edges_by_level),
    }
    with open(os.path.join(out_dir, "graph.json"), "w") as f:
        json.dump(meta, f, indent=2)


def load_graph(in_dir: str) -> EarthGraph:
    with open(os.path.join(in_dir, "graph.json")) as f:
        meta = json.load(f)
    shapes = meta["arrays"]

    def rd(name, dt):
        return _read_array(os.path.join(in_dir, name), dt, shapes[name])

    levels = [rd(f"edges_l{k}.u32", "u4").astype(np.int64) for k in range(meta["n_levels"])]
    return EarthGraph(
        rd("grid_lat.f64", "f8"),
        rd("grid_lon.f64", "f8"),
        rd("mesh_nodes.f64", "f8"),
        levels,
        rd("edges_r.u32", "u4").astype(np.int64),
        rd("g2m.u32", "u4").astype(np.int64),
        rd("m2g.u32", "u4").astype(np.int64),
        meta["config"],
    )


def graph_from_config(cfg: dict) -> EarthGraph:
    """Rebuild a graph from the ``config`` dict recorded by :func:`build_earth_graph`."""
    regions = [RegionBox(*r) for r in cfg.get("regions", [])]
    domain = RegionBox(*cfg["domain"]) if cfg.get("domain") else None
    return build_earth_graph(
        cfg["h"], cfg["w"], cfg["levels"], regions, g2m_factor=cfg.get("g2m_factor", G2M_RADIUS_FACTOR), domain=domain
    )
