import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nestcast.meshgraph import (
    RegionBox,
    arc_length,
    build_earth_graph,
    graph_from_config,
    great_circle_km,
    icosahedron,
    icosphere,
    latlon_to_xyz,
    load_graph,
    refine_region,
    save_graph,
    subdivide,
    xyz_to_latlon,
)

REFERENCE_BOXES = [RegionBox(0.0, 30.0, 105.0, 160.0), RegionBox(10.0, 30.0, -95.0, -35.0)]


def undirected(edges):
    e = np.sort(edges, axis=1)
    return {tuple(r) for r in e}


def test_icosahedron_counts():
    m = icosahedron()
    assert m.n_vertices == 12
    assert m.n_faces == 20
    assert len(m.edges()) == 30
    assert m.level == 0
    np.testing.assert_allclose(np.linalg.norm(m.vertices, axis=1), 1.0, atol=1e-12)


def test_icosahedron_has_north_pole_vertex():
    m = icosahedron()
    assert np.any(np.all(np.isclose(m.vertices, [0, 0, 1], atol=1e-12), axis=1))


def test_faces_consistently_outward():
    for m in icosphere(3):
        v = m.vertices[m.faces]
        normal = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        assert np.all(np.einsum("ij,ij->i", normal, v.mean(axis=1)) > 0)
        assert np.all((m.faces[:, 0] != m.faces[:, 1]) & (m.faces[:, 1] != m.faces[:, 2]) & (m.faces[:, 0] != m.faces[:, 2]))


@pytest.mark.parametrize("level", range(6))
def test_closed_form_counts(level):
    m = icosphere(level)[-1]
    V, E, F = m.n_vertices, len(m.edges()), m.n_faces
    assert (V, E, F) == (10 * 4**level + 2, 30 * 4**level, 20 * 4**level)
    assert V - E + F == 2


def test_subdivide_level1():
    m = subdivide(icosahedron())
    assert (m.n_vertices, m.n_faces, m.level) == (42, 80, 1)


def test_subdivide_keeps_parent_prefix():
    levels = icosphere(3)
    for coarse, fine in zip(levels, levels[1:]):
        np.testing.assert_array_equal(fine.vertices[: coarse.n_vertices], coarse.vertices)
        np.testing.assert_allclose(np.linalg.norm(fine.vertices, axis=1), 1.0, atol=1e-12)


def test_midpoints_are_deduplicated():
    m = icosphere(2)[-1]
    rounded = np.round(m.vertices, 12)
    assert len(np.unique(rounded, axis=0)) == m.n_vertices


def test_latlon_roundtrip():
    lat = np.array([-60.0, 0.0, 45.0, 89.0])
    lon = np.array([-170.0, 0.0, 30.0, 179.0])
    la, lo = xyz_to_latlon(latlon_to_xyz(lat, lon))
    np.testing.assert_allclose(la, lat, atol=1e-10)
    np.testing.assert_allclose(lo, lon, atol=1e-10)


def test_pole_longitude_canonical():
    la, lo = xyz_to_latlon(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]))
    np.testing.assert_array_equal(lo, [0.0, 0.0])
    np.testing.assert_array_equal(la, [90.0, -90.0])


def test_great_circle_examples():
    assert great_circle_km(10.0, 20.0, 10.0, 20.0) == 0.0
    assert abs(great_circle_km(0.0, 0.0, 0.0, 180.0) - 20015.09) < 0.01
    assert abs(great_circle_km(0.0, 0.0, 0.0, 90.0) - 10007.54) < 0.01


latlon = st.tuples(st.floats(-90, 90), st.floats(-180, 179.999))


@settings(max_examples=200, deadline=None)
@given(latlon, latlon, latlon)
def test_great_circle_metric(a, b, c):
    ab = great_circle_km(*a, *b)
    assert ab >= 0
    assert abs(ab - great_circle_km(*b, *a)) < 1e-9
    assert great_circle_km(*a, *c) <= ab + great_circle_km(*b, *c) + 1e-6


def test_region_box_wraps_longitude():
    box = RegionBox(-10.0, 10.0, 170.0, -170.0)
    assert box.contains(0.0, 175.0)
    assert box.contains(0.0, -175.0)
    assert not box.contains(0.0, 0.0)
    with pytest.raises(ValueError):
        RegionBox(10.0, 10.0, 0.0, 20.0)


def test_refine_region_noop_outside():
    m = icosphere(2)[-1]
    r = refine_region(m, RegionBox(0.0, 0.001, 0.0, 0.001))
    assert r.n_refined_faces == 0
    np.testing.assert_array_equal(r.mesh.vertices, m.vertices)
    np.testing.assert_array_equal(r.mesh.faces, m.faces)
    assert len(r.refined_edges) == 0


def test_refine_whole_sphere_equals_subdivision():
    m = icosphere(2)[-1]
    full = refine_region(m, RegionBox(-90.0, 90.0, -180.0, 180.0)).mesh
    sub = subdivide(m)
    assert full.n_vertices == sub.n_vertices and full.n_faces == sub.n_faces
    key = lambda v: np.lexsort(np.round(v, 10).T)  # noqa: E731
    np.testing.assert_allclose(full.vertices[key(full.vertices)], sub.vertices[key(sub.vertices)], atol=1e-12)


def test_refine_region_keeps_hanging_nodes():
    m = icosphere(3)[-1]
    r = refine_region(m, RegionBox(0.0, 30.0, 105.0, 160.0))
    assert r.n_refined_faces > 0
    # every refined face adds 3 midpoints, shared along interior edges
    new = r.mesh.n_vertices - m.n_vertices
    assert r.n_refined_faces <= new <= 3 * r.n_refined_faces
    # child edges: 9 per refined face before deduplication
    assert len(r.refined_edges) <= 9 * r.n_refined_faces


def brute_force_face(vertices, faces, p):
    """Index of the lexicographically smallest face whose spherical triangle contains p."""
    hits = []
    for f, (a, b, c) in enumerate(faces):
        A, B, C = vertices[a], vertices[b], vertices[c]
        s = [np.dot(np.cross(A, B), p), np.dot(np.cross(B, C), p), np.dot(np.cross(C, A), p)]
        if min(s) >= -1e-12:
            hits.append((tuple(sorted((a, b, c))), f))
    return min(hits)[1]


def test_m2g_against_brute_force_l0():
    g = build_earth_graph(4, 8, 0)
    assert len(g.m2g) == 96
    deg = np.bincount(g.g2m[:, 0], minlength=g.n_grid)
    assert deg.min() >= 1
    faces = icosahedron().faces
    for gi in range(g.n_grid):
        want = sorted(faces[brute_force_face(g.mesh_xyz, faces, g.grid_xyz[gi])])
        got = sorted(g.m2g[g.m2g[:, 1] == gi, 0])
        assert got == want


def test_graph_invariants_with_region():
    g = build_earth_graph(16, 32, 2, [RegionBox(0.0, 40.0, 100.0, 170.0)])
    # mesh edges closed under reversal
    s = {tuple(e) for e in g.mesh_edges}
    assert all((r, q) in s for q, r in s)
    # exact m2g degree
    np.testing.assert_array_equal(np.bincount(g.m2g[:, 1], minlength=g.n_grid), 3)
    assert len(g.m2g) == 3 * g.n_grid
    # g2m rule
    radius = g.config["g2m_radius"]
    d = arc_length(g.grid_xyz[g.g2m[:, 0]], g.mesh_xyz[g.g2m[:, 1]])
    if g.config["g2m_nearest_fallbacks"] == 0:
        assert np.all(d <= radius * (1 + 1e-9))
    assert np.bincount(g.g2m[:, 0], minlength=g.n_grid).min() >= 1
    # edge feature 0 is the arc length
    e = g.mesh_edges
    np.testing.assert_allclose(g.mesh_edge_feats[:, 0], arc_length(g.mesh_xyz[e[:, 0]], g.mesh_xyz[e[:, 1]]), atol=1e-10)
    np.testing.assert_allclose(g.mesh_edge_feats[:, 1:], g.mesh_xyz[e[:, 0]] - g.mesh_xyz[e[:, 1]], atol=1e-15)
    # node features
    lat = np.deg2rad(np.repeat(g.grid_lat, len(g.grid_lon)))
    lon = np.deg2rad(np.tile(g.grid_lon, len(g.grid_lat)))
    np.testing.assert_allclose(g.grid_node_feats, np.stack([np.cos(lat), np.sin(lon), np.cos(lon)], 1), atol=1e-12)


def test_multiscale_containment():
    g = build_earth_graph(8, 16, 3)
    levels = icosphere(3)
    for k, e in enumerate(g.mesh_edges_by_level):
        assert e.max() < levels[k].n_vertices
        assert undirected(e) == undirected(levels[k].edges())


def test_grid_registration():
    g = build_earth_graph(120, 240, 0)
    assert g.grid_lat[0] == pytest.approx(-90 + 0.75)
    assert g.grid_lon[1] - g.grid_lon[0] == pytest.approx(1.5)


def test_build_is_deterministic():
    a = build_earth_graph(12, 24, 2, [RegionBox(-10.0, 20.0, 30.0, 80.0)])
    b = build_earth_graph(12, 24, 2, [RegionBox(-10.0, 20.0, 30.0, 80.0)])
    for name in ("mesh_xyz", "mesh_edges", "g2m", "m2g", "mesh_edge_feats", "g2m_feats"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_limited_area_graph():
    box = RegionBox(-20.0, 20.0, 40.0, 80.0)
    g = build_earth_graph(16, 16, 3, domain=box)
    assert g.grid_lat.min() > -20 and g.grid_lat.max() < 20
    assert len(g.m2g) == 3 * g.n_grid
    assert g.n_mesh < 642
    assert g.mesh_edges.max() < g.n_mesh


def test_invalid_inputs():
    with pytest.raises(ValueError):
        build_earth_graph(0, 8, 1)
    with pytest.raises(ValueError):
        build_earth_graph(4, 8, -1)


def test_save_load_roundtrip(tmp_path):
    g = build_earth_graph(8, 16, 2, [RegionBox(0.0, 30.0, 100.0, 150.0)])
    save_graph(g, tmp_path / "g")
    h = load_graph(tmp_path / "g")
    assert h.counts() == g.counts()
    np.testing.assert_array_equal(h.m2g, g.m2g)
    np.testing.assert_array_equal(h.mesh_xyz, g.mesh_xyz)
    raw = np.fromfile(tmp_path / "g" / "m2g.u32", dtype="<u4").reshape(-1, 2)
    np.testing.assert_array_equal(raw, g.m2g)
    again = graph_from_config(g.config)
    np.testing.assert_array_equal(again.g2m, g.g2m)


@pytest.mark.slow
def test_full_scale_counts():
    g = build_earth_graph(120, 240, 5, REFERENCE_BOXES)
    c = g.counts()
    assert c["grid_nodes"] == 28800
    assert c["m2g_edges"] == 86400
    assert np.bincount(g.g2m[:, 0], minlength=g.n_grid).min() >= 1
