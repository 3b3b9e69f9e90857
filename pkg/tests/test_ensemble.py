import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nestcast.ensemble import (
    PerlinSpec,
    ensemble_forecast,
    ensemble_mean,
    gradient_noise,
    perlin2d,
    perturbations,
)


def test_fade_endpoints():
    from nestcast.ensemble import _fade

    assert _fade(0.0) == 0.0 and _fade(1.0) == 1.0 and _fade(0.5) == 0.5


def test_noise_vanishes_on_lattice_points():
    n = gradient_noise(16, 32, 4, 2, np.random.default_rng(0))
    # lattice points sit every 8 columns and every 8 rows
    np.testing.assert_allclose(n[::8, ::8], 0.0, atol=1e-15)
    assert np.abs(n).max() > 0


def test_noise_is_periodic_in_longitude():
    n = gradient_noise(8, 64, 4, 2, np.random.default_rng(1))
    wider = np.concatenate([n, n], axis=1)
    # the seam is as smooth as any interior column step
    steps = np.abs(np.diff(wider, axis=1)).max()
    assert np.abs(n[:, 0] - n[:, -1]).max() <= steps + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.floats(0.1, 0.9), st.floats(0.0, 2.0), st.integers(0, 100))
def test_perlin_bounded(octaves, persistence, amplitude, seed):
    spec = PerlinSpec(octaves=octaves, persistence=persistence, amplitude=amplitude, seed=seed)
    f = perlin2d(16, 32, spec)
    assert np.abs(f).max() <= spec.bound() + 1e-12


def test_zero_amplitude_is_zero():
    assert not np.any(perlin2d(8, 16, PerlinSpec(amplitude=0.0)))
    with pytest.raises(ValueError):
        PerlinSpec(amplitude=-1.0)


def test_members_independent_and_reproducible():
    spec = PerlinSpec(seed=5)
    a = perturbations((2, 8, 16), spec, 4)
    b = perturbations((2, 8, 16), spec, 4)
    assert a.tobytes() == b.tobytes()
    assert a.shape == (4, 2, 8, 16)
    assert not np.allclose(a[0], a[1])
    assert not np.allclose(a[0, 0], a[0, 1])
    # adding members does not change the earlier ones
    np.testing.assert_array_equal(perturbations((2, 8, 16), spec, 6)[:4], a)


def test_ensemble_mean_order_is_fixed():
    x = np.random.default_rng(0).normal(size=(5, 3))
    ids = np.array([3, 0, 4, 1, 2])
    want = np.zeros(3)
    for i in np.argsort(ids):
        want += x[i]
    assert ensemble_mean(x, ids).tobytes() == (want / 5).tobytes()
    np.testing.assert_allclose(ensemble_mean(x), x.mean(axis=0), atol=1e-15)


def test_ensemble_forecast_linear_model():
    z0 = np.ones((1, 8, 16))
    spec = PerlinSpec(amplitude=0.1, seed=2)
    res = ensemble_forecast(lambda z: 0.5 * z, z0, spec, 3, 2)
    assert res.members.shape == (3, 2, 1, 8, 16)
    np.testing.assert_allclose(res.members[:, 1], 0.25 * (z0 + res.noise))
    np.testing.assert_allclose(res.mean[1], 0.25 * (z0 + res.noise.mean(axis=0))[0:1], atol=1e-12)
    with pytest.raises(ValueError):
        ensemble_forecast(lambda z: z, z0, spec, 0, 1)
