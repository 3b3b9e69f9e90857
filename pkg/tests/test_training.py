import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from nestcast import tensorcore as tc
from nestcast import training as tr
from nestcast.meshgraph import build_earth_graph
from nestcast.network import Forecaster, NetworkConfig


@pytest.fixture(scope="module")
def graph():
    return build_earth_graph(4, 8, 1)


def tiny(graph, seed=0, **kw):
    cfg = NetworkConfig(latent_dim=8, n_msm_blocks=1, n_heads=2, gate_dim=4, gate_hidden=8, attn_hidden=8, n_channels=2, **kw)
    return Forecaster(cfg, graph, seed=seed)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, (3, 2, 4, 5), elements=st.floats(-1e3, 1e3)))
def test_norm_roundtrip(x):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        stats = tr.fit_norm(x)
    np.testing.assert_allclose(tr.denormalize(tr.normalize(x, stats), stats), x, atol=1e-9 * (1 + np.abs(x).max()))


def test_norm_moments():
    x = np.random.default_rng(0).normal(3.0, 5.0, size=(10, 3, 4, 6))
    z = tr.normalize(x, tr.fit_norm(x))
    np.testing.assert_allclose(z.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(z.std(axis=(0, 2, 3)), 1.0, atol=1e-12)
    stats = tr.fit_norm(x)
    again = tr.NormStats.from_dict(stats.to_dict())
    np.testing.assert_array_equal(again.std, stats.std)


def test_constant_channel_warns():
    x = np.ones((2, 2, 3, 3))
    with pytest.warns(UserWarning):
        stats = tr.fit_norm(x)
    assert np.all(stats.std == tr.STD_FLOOR)


def test_loss_values():
    t = np.array([[[3.0, 4.0]]])
    p = np.array([[[3.0, 0.0]]])
    assert tr.norm_ratio_loss(p, t) == pytest.approx(16.0 / 25.0)
    got = tr.norm_ratio_loss(tc.Tensor(p), t).data
    assert float(got) == pytest.approx(16.0 / 25.0)
    # pointwise relative error with the floored denominator
    r = tr.relative_l2_loss(np.array([1.0, 2.0]), np.array([1.0, 0.0]))
    assert float(np.asarray(r.data if hasattr(r, "data") else r)) == pytest.approx(0.5 * 4.0 / (0.0 + tr.EPS_DEN))


@pytest.mark.parametrize("name", ["norm_ratio", "relative_l2"])
def test_loss_gradients(name):
    rng = np.random.default_rng(0)
    p = tc.Tensor(rng.normal(size=(2, 5, 3)), requires_grad=True)
    t = rng.normal(size=(2, 5, 3)) + 2.0
    assert tc.grad_check(lambda: tr.LOSSES[name](p, t), [p]) < 1e-6


def test_cosine_schedule():
    lrs = [tr.cosine_lr(s, 11, 1.0, 0.1) for s in range(11)]
    assert lrs[0] == 1.0 and lrs[-1] == pytest.approx(0.1)
    assert lrs[5] == pytest.approx(0.55)
    assert np.all(np.diff(lrs) <= 0)


def test_sgd_momentum_matches_hand_computation():
    ps = tc.ParamStore(np.float64)
    w = ps.add("w", np.array([1.0]))
    opt = tr.SGDMomentum(ps, momentum=0.9)
    v, x = 0.0, 1.0
    for _ in range(3):
        w.grad = 2.0 * w.data
        opt.step(0.1)
        v = 0.9 * v + 2.0 * x
        x = x - 0.1 * v
    assert w.data[0] == pytest.approx(x)


def test_adam_matches_textbook():
    ps = tc.ParamStore(np.float64)
    w = ps.add("w", np.array([1.0, -2.0]))
    opt = tr.Adam(ps)
    x = np.array([1.0, -2.0])
    m = np.zeros(2)
    v = np.zeros(2)
    for t in range(1, 5):
        g = np.array([3.0, 1.0]) * x
        w.grad = g.copy()
        opt.step(0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(w.data, x, rtol=1e-12)


def test_make_pairs():
    seq = np.arange(2 * 4 * 1 * 2 * 2.0).reshape(2, 4, 1, 2, 2)
    x, y = tr.make_pairs(seq)
    assert x.shape == y.shape == (6, 1, 2, 2)
    np.testing.assert_array_equal(x[1], seq[0, 1])
    np.testing.assert_array_equal(y[1], seq[0, 2])


def test_training_reduces_loss_and_is_reproducible(graph):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 2, 4, 8))
    y = np.roll(x, 1, axis=-1)
    cfg = tr.TrainConfig(steps=40, lr0=3e-3, optimizer="adam", batch_size=4, dtype="float64")
    a = tr.train(tiny(graph), x, y, cfg)
    b = tr.train(tiny(graph), x, y, cfg)
    assert a.losses.tobytes() == b.losses.tobytes()
    assert a.losses[-5:].mean() < a.losses[:5].mean()
    assert a.lrs[0] == 3e-3 and a.lrs[-1] == 0.0


def test_training_aborts_on_nan(graph):
    x = np.zeros((2, 2, 4, 8))
    y = np.full((2, 2, 4, 8), np.nan)
    with pytest.raises(FloatingPointError, match="step 0"):
        tr.train(tiny(graph), x, y, tr.TrainConfig(steps=2, dtype="float64"))


def test_rollout_and_predict(graph):
    model = tiny(graph)
    z0 = np.random.default_rng(1).normal(size=(2, 4, 8))
    seq = tr.rollout(model, z0, 3)
    assert seq.shape == (3, 2, 4, 8)
    np.testing.assert_allclose(seq[1], model(model(z0)))
    assert tr.rollout(model, z0, 0).shape == (0, 2, 4, 8)
    batch = np.stack([z0, seq[0], seq[1]])
    np.testing.assert_allclose(tr.predict(model, batch, batch=2), np.stack([seq[0], seq[1], seq[2]]), atol=1e-12)


def test_model_checkpoint_roundtrip(graph, tmp_path):
    model = tiny(graph, seed=3)
    stats = tr.NormStats(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    tr.save_model(model, tmp_path / "m", stats)
    loaded, st2, _ = tr.load_model(tmp_path / "m")
    z = np.random.default_rng(2).normal(size=(2, 4, 8))
    assert loaded(z).tobytes() == model(z).tobytes()
    np.testing.assert_array_equal(st2.std, stats.std)
    assert loaded.graph.counts() == graph.counts()
