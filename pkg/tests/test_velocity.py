import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graspflow.autodiff import Adam
from graspflow.gradcheck import check_module
from graspflow.velocity import (INPUT_DIM, POSE_DIM, FlowSample, TrainConfig, VelocityNet, cfm_batch_loss, fit,
                                flow_batch, sample_tc, split_indices)


def constant_net(u):
    """A real VelocityNet whose output is ``u`` for every input."""
    net = VelocityNet(seed=0)
    out = net.net.layers[-3]
    out.W.value[...] = 0.0
    out.b.value[...] = 0.0
    net.output_scale.shift[...] = u
    return net


def random_batch(rng, n=8):
    g0 = rng.uniform(-1, 1, (n, POSE_DIM))
    g1 = rng.uniform(-1, 1, (n, POSE_DIM))
    c = rng.uniform(-1, 1, (n, 128))
    return g0, g1, c


def test_dimensions():
    net = VelocityNet()
    assert INPUT_DIM == 136
    assert net.net.layers[1].W.value.shape == (136, 128)
    assert [l.W.value.shape[1] for l in net.net.layers if hasattr(l, "W")] == [128, 256, 256, 128, 7]


def test_fresh_net_finite_and_eval_idempotent():
    rng = np.random.default_rng(0)
    g0, _, c = random_batch(rng)
    net = VelocityNet(seed=1)
    a = net.forward(g0, rng.random(8), c)
    assert a.shape == (8, 7) and np.all(np.isfinite(a))
    t = np.full(8, 0.3)
    assert np.array_equal(net.forward(g0, t, c), net.forward(g0, t, c))
    with pytest.raises(ValueError):
        net.forward(g0, t, c[:, :100])


def test_relu_output_nonnegative():
    rng = np.random.default_rng(1)
    g0, _, c = random_batch(rng, 32)
    net = VelocityNet(seed=2, output_activation="relu")
    assert np.all(net.forward(g0, rng.random(32), c, train=True) >= 0)


def test_stub_losses():
    rng = np.random.default_rng(2)
    g0, g1, c = random_batch(rng, 1)
    u = (g1 - g0)[0]
    net = constant_net(u)
    gt, target = flow_batch(np.repeat(g0, 5, 0), np.repeat(g1, 5, 0), rng.random(5))
    assert cfm_batch_loss(net, gt, rng.random(5), np.repeat(c, 5, 0), target, train=False, backward=False) == 0.0
    net = constant_net(u + np.eye(7)[0])
    loss = cfm_batch_loss(net, gt, rng.random(5), np.repeat(c, 5, 0), target, train=False, backward=False)
    assert loss == pytest.approx(1 / 7, abs=1e-15)


def test_one_adam_step_reduces_batch_loss():
    rng = np.random.default_rng(3)
    g0, g1, c = random_batch(rng, 16)
    tc = rng.random(16)
    gt, u = flow_batch(g0, g1, tc)
    net = VelocityNet(seed=3)
    opt = Adam(net.params())
    before = cfm_batch_loss(net, gt, tc, c, u, train=True, backward=True)
    opt.step()
    after = cfm_batch_loss(net, gt, tc, c, u, train=True, backward=False)
    assert after < before


def test_full_net_gradients():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        net = VelocityNet(rng=rng)
        x = rng.uniform(-1, 1, (4, INPUT_DIM))
        errs = check_module(lambda v, tape: net.net.forward(v, train=True, tape=tape), net.params(), x, rng,
                            max_entries=6)
        assert max(errs.values()) < 1e-4, errs


def test_batch_loss_is_mean_of_sample_losses():
    rng = np.random.default_rng(4)
    g0, g1, c = random_batch(rng, 12)
    tc = rng.random(12)
    gt, u = flow_batch(g0, g1, tc)
    net = VelocityNet(seed=4)
    full = cfm_batch_loss(net, gt, tc, c, u, train=False, backward=False)
    each = [cfm_batch_loss(net, gt[i:i + 1], tc[i:i + 1], c[i:i + 1], u[i:i + 1], train=False, backward=False)
            for i in range(12)]
    assert abs(full - np.mean(each)) < 1e-12


def test_sample_tc():
    draws = sample_tc(np.random.default_rng(5), 100_000)
    assert abs(draws.mean() - 0.5) < 0.01
    assert draws.min() >= 0 and draws.max() < 1
    assert np.array_equal(sample_tc(np.random.default_rng(6), 10), sample_tc(np.random.default_rng(6), 10))


@settings(max_examples=50)
@given(st.integers(2, 400), st.floats(0.05, 0.95), st.integers(0, 2**31))
def test_split_disjoint_exhaustive_pure(n, frac, seed):
    tr, va = split_indices(n, frac, seed)
    assert not set(tr) & set(va)
    assert sorted(np.concatenate([tr, va])) == list(range(n))
    tr2, va2 = split_indices(n, frac, seed)
    assert np.array_equal(tr, tr2) and np.array_equal(va, va2)


def _pairs(rng, n, same=False):
    out = []
    for _ in range(n):
        g0 = np.concatenate([rng.normal(size=4), rng.uniform(-0.1, 0.1, 3)])
        g0[:4] /= np.linalg.norm(g0[:4])
        g1 = g0.copy() if same else g0 + rng.normal(scale=0.05, size=7)
        out.append(FlowSample(g0, g1, rng.uniform(0, 1, 128)))
    return out


def test_training_drives_loss_down():
    samples = _pairs(np.random.default_rng(7), 20)
    res = fit(samples, TrainConfig(epochs=300, seed=1))
    assert res.train_loss[-1] < 0.1 * res.train_loss[0]
    assert np.all(np.isfinite(res.val_loss))


def test_identity_dataset_learns_zero_field():
    rng = np.random.default_rng(7)
    samples = _pairs(rng, 20, same=True)
    res = fit(samples, TrainConfig(epochs=50, seed=1))
    tr = res.train_idx
    g0 = np.vstack([samples[i].g_rigid for i in tr])
    c = np.vstack([samples[i].condition for i in tr])
    out = res.net.forward(g0, rng.random(len(tr)), c)
    assert np.max(np.linalg.norm(out, axis=1)) < 1e-3


def test_fit_is_deterministic_and_validation_is_passive():
    samples = _pairs(np.random.default_rng(8), 20)
    a = fit(samples, TrainConfig(epochs=15, seed=3))
    b = fit(samples, TrainConfig(epochs=15, seed=3))
    assert a.train_loss == b.train_loss and a.val_loss == b.val_loss
    assert np.array_equal(a.net.get_flat(), b.net.get_flat())
    assert len(a.val_loss) == 15 and len(a.val_idx) == 4


def test_single_pair_reaches_tiny_loss():
    g0 = np.array([0.9, 0.1, -0.3, 0.2, 0.02, -0.01, 0.08])
    g1 = np.array([0.0, 1.0, 0.1, 0.0, 0.0, 0.0, 0.03])
    sample = FlowSample(g0, g1, np.full(128, 0.4))
    # 64 draws of t per epoch in batches of 4 give a pool that BN can normalise
    cfg = TrainConfig(epochs=2000, seed=0, draws_per_pair=64, batch_size=4)
    # identity output scaling, so the fit is not exact by construction
    res = fit([sample], cfg, scale_output=False)
    assert len(res.train_idx) == 1 and len(res.val_idx) == 0
    assert min(res.train_loss) < 1e-6


def test_config_validation():
    for bad in (dict(split=1.0), dict(epochs=0), dict(batch_size=1), dict(output_activation="tanh"),
                dict(condition_noise=-1), dict(draws_per_pair=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
