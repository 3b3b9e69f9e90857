import numpy as np
import pytest

from nestcast.meshgraph import great_circle_km, grid_latlon
from nestcast.synthetic import VortexConfig, vortex_dataset
from nestcast.tracking import (
    EARTH_RADIUS_M,
    CycloneTrack,
    Fix,
    TrackerConfig,
    check_track,
    local_extrema,
    local_min_mslp,
    relative_vorticity,
    track_cyclone,
    track_position_error,
)

LAT, LON = grid_latlon(120, 240, lon_range=(-180.0, 180.0))


@pytest.fixture(scope="module")
def vortex():
    return vortex_dataset(120, 240, 20, VortexConfig())


def test_vorticity_solid_body_rotation():
    lat, lon = grid_latlon(90, 180)
    phi = np.deg2rad(lat)[:, None]
    U = 20.0
    u = np.broadcast_to(U * np.cos(phi), (90, 180))
    zeta = relative_vorticity(u, np.zeros_like(u), lat, lon)
    # centred differences of cos^2 over 2h carry the exact factor sin(2h) / 2h
    two_h = np.deg2rad(4.0)
    want = 2.0 * U * np.sin(phi) / EARTH_RADIUS_M * np.sin(two_h) / two_h
    np.testing.assert_allclose(zeta[1:-1], np.broadcast_to(want, (90, 180))[1:-1], rtol=1e-10, atol=1e-20)


def test_vorticity_meridional_wave():
    lat, lon = grid_latlon(90, 180)
    lam = np.deg2rad(lon)[None, :]
    phi = np.deg2rad(lat)[:, None]
    v = np.broadcast_to(10.0 * np.sin(lam), (90, 180))
    zeta = relative_vorticity(np.zeros_like(v), v, lat, lon)
    dlam = np.deg2rad(2.0)
    want = 10.0 * np.cos(lam) * np.sin(dlam) / dlam / (EARTH_RADIUS_M * np.cos(phi))
    np.testing.assert_allclose(zeta, want, rtol=1e-12, atol=1e-20)


def test_local_extrema_hand_case():
    f = np.array(
        [
            [9.0, 9.0, 9.0, 9.0],
            [9.0, 1.0, 9.0, 9.0],
            [9.0, 9.0, 9.0, 2.0],
            [9.0, 0.0, 9.0, 9.0],
        ]
    )
    mins = local_extrema(f, "min")
    assert mins[1, 1] and mins[2, 3]
    assert not mins[3, 1]  # edge rows are never candidates
    assert mins.sum() == 2
    assert local_extrema(-f, "max").sum() == 2


def test_local_min_ties_to_smallest_index():
    lat, lon = grid_latlon(6, 8, lon_range=(-180.0, 180.0))
    f = np.full((6, 8), 1000.0)
    f[2, 3] = f[3, 5] = 990.0
    (ij, value) = local_min_mslp(f, lat, lon, (0.0, 0.0), 1e5)
    assert ij == (2, 3) and value == 990.0
    assert local_min_mslp(f, lat, lon, (-60.0, -160.0), 10.0) is None


def test_track_follows_analytic_vortex(vortex):
    fields, centers = vortex
    track = track_cyclone(fields, LAT, LON, tuple(centers[0]))
    assert track.termination == "end-of-data"
    assert len(track.fixes) == 20
    pos = track.positions
    assert np.all(np.abs(pos[:, 0] - centers[:, 0]) <= 0.75 + 1e-9)
    assert np.all(np.abs(pos[:, 1] - centers[:, 1]) <= 0.75 + 1e-9)
    d = great_circle_km(pos[:, 0], pos[:, 1], centers[:, 0], centers[:, 1])
    assert d.max() < 120.0
    assert check_track(track, fields, LAT, LON) == []


def test_track_terminates_when_vortex_removed():
    fields, centers = vortex_dataset(120, 240, 20, VortexConfig(remove_after=10))
    track = track_cyclone(fields, LAT, LON, tuple(centers[0]))
    assert track.termination == "criteria-failed"
    assert track.termination_step == 11
    assert len(track.fixes) == 11


def test_southern_hemisphere_track():
    cfg = VortexConfig(lat0=-18.0, lon0=60.0, dlat=-0.5)
    fields, centers = vortex_dataset(120, 240, 8, cfg)
    track = track_cyclone(fields, LAT, LON, tuple(centers[0]))
    assert len(track.fixes) == 8
    assert np.all(track.positions[:, 0] < 0)


def test_thickness_criterion_for_extratropical_systems():
    warm, c = vortex_dataset(120, 240, 3, VortexConfig(lat0=40.0))
    assert len(track_cyclone(warm, LAT, LON, tuple(c[0])).fixes) == 3
    cold, c = vortex_dataset(120, 240, 3, VortexConfig(lat0=40.0, warm_core_m=-150.0))
    t = track_cyclone(cold, LAT, LON, tuple(c[0]))
    assert t.termination == "criteria-failed" and t.termination_step == 0


def test_wind_criterion_only_over_land(vortex):
    fields, centers = vortex
    land = np.ones((120, 240), dtype=bool)
    strict = TrackerConfig(wind_threshold=40.0, land_mask=land)
    assert track_cyclone(fields, LAT, LON, tuple(centers[0]), strict).termination_step == 0
    sea = TrackerConfig(wind_threshold=40.0, land_mask=np.zeros_like(land))
    assert len(track_cyclone(fields, LAT, LON, tuple(centers[0]), sea).fixes) == 20


def test_check_track_flags_jumps(vortex):
    fields, _ = vortex
    bogus = CycloneTrack([Fix(0, 15.75, 140.25, 980.0), Fix(1, 30.0, 160.0, 980.0)], "end-of-data")
    problems = check_track(bogus, fields, LAT, LON)
    assert any("jump" in p for p in problems)


def test_position_error():
    a = CycloneTrack([Fix(0, 0.0, 0.0, 1.0), Fix(1, 0.0, 1.0, 1.0)], "end-of-data")
    b = CycloneTrack([Fix(1, 0.0, 2.0, 1.0)], "end-of-data")
    assert track_position_error(a, b) == pytest.approx(great_circle_km(0.0, 1.0, 0.0, 2.0))
    assert track_position_error(a, a) == 0.0
    with pytest.warns(UserWarning):
        assert np.isnan(track_position_error(a, CycloneTrack([], "no-minimum", 0)))


def test_invalid_inputs(vortex):
    fields, _ = vortex
    with pytest.raises(ValueError):
        track_cyclone(fields, LAT, LON, (95.0, 0.0))
    with pytest.raises(ValueError):
        TrackerConfig(search_radius_km=0.0)
