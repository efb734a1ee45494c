import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nirom.errors import RolloutError, ShapeError, TrainingDivergence, UsageError
from nirom.sampling import constant_signal
from nirom.surrogate import (Normalizer, SurrogateNet, TrainingConfig, TransitionData,
                             fit_normalizer, forward_direct, forward_direct_with_tau,
                             forward_rknn, loss_and_gradients, make_net, rollout, step, train,
                             train_members)
from nirom.surrogate import flatten_grads

from helpers import rigged_net, zero_net
from oracles import rk4_step


def random_net(mode, n_r=3, n_mu=2, seed=0, activation="tanh"):
    rng = np.random.default_rng(seed)
    nz = Normalizer(rng.normal(size=n_r), rng.uniform(0.5, 2, n_r), rng.normal(size=n_mu),
                    rng.uniform(0.5, 2, n_mu), rng.uniform(0.5, 2, n_r), 0.7)
    cfg = TrainingConfig(seed=seed, activation=activation)
    return make_net(mode, nz, 0.3, cfg)


def random_batch(net, n=7, seed=1):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(n, net.n_r))
    mu = rng.normal(size=(n, net.n_mu))
    yn = rng.normal(size=(n, net.n_r))
    tau = rng.uniform(0.1, 0.5, n) if net.mode == "direct_tau" else np.full(n, net.tau_train)
    return TransitionData(y, mu, yn, tau, net.tau_train)


def fd_gradient(net, batch, eps=1e-5):
    flat = net.core.get_flat()
    g = np.empty_like(flat)
    for i in range(flat.size):
        for sign, store in ((1, 0), (-1, 1)):
            pert = flat.copy()
            pert[i] += sign * eps
            net.core.set_flat(pert)
            val = loss_and_gradients(net, batch)[0]
            if store == 0:
                up = val
            else:
                down = val
        g[i] = (up - down) / (2 * eps)
    net.core.set_flat(flat)
    return g


def test_zero_weight_direct_returns_mean():
    net = zero_net(2, 1, mode="direct")
    net.normalizer.state_mean[:] = [3.0, -1.0]
    assert np.allclose(forward_direct(net, np.array([10.0, 20.0]), np.array([5.0])), [3.0, -1.0])


def test_identity_rigged_direct():
    net = rigged_net(np.eye(3), n_mu=2, mode="direct")
    y = np.array([0.3, -2.0, 1.1])
    assert np.allclose(forward_direct(net, y, np.array([1.0, 2.0])), y, atol=1e-15)


def test_zero_core_rknn_is_identity():
    net = zero_net(4, 2)
    y = np.array([1.0, -2.0, 3.0, 0.5])
    assert np.array_equal(forward_rknn(net, y, np.array([0.1, 0.2])), y)


def test_rigged_decay_matches_rk4_polynomial():
    net = rigged_net([[-1.0]], tau=0.1)
    out = forward_rknn(net, np.array([1.0]), np.array([0.0]))
    tau = 0.1
    factor = 1 - tau + tau ** 2 / 2 - tau ** 3 / 6 + tau ** 4 / 24
    assert out[0] == pytest.approx(factor, rel=1e-15)
    assert factor == pytest.approx(0.9048375, abs=1e-7)


def test_rknn_matches_textbook_rk4_for_any_core():
    net = random_net("rknn", seed=4)
    mu = np.array([0.2, -0.4])
    nz = net.normalizer

    def g(y):
        x = np.concatenate([nz.norm_state(y), nz.norm_param(mu)])
        return nz.rhs_scale * net.core(x[None, :])[0]

    y = np.array([0.5, -1.0, 2.0])
    for tau in (0.3, 0.05, 1.7):
        assert np.allclose(forward_rknn(net, y, mu, tau), rk4_step(g, y, tau),
                           rtol=1e-12, atol=1e-12)


def test_rigged_rollout_global_order():
    errs = []
    for k in (20, 40):
        tau = 2.0 / k
        net = rigged_net([[-1.0]], tau=tau)
        traj = rollout(net, np.array([1.0]), constant_signal([0.0]), 2.0, k)
        errs.append(abs(traj[0, -1] - np.exp(-2.0)))
    assert errs[0] / errs[1] == pytest.approx(16.0, rel=0.2)


def test_zero_core_rollout_constant():
    net = zero_net(2, 1)
    traj = rollout(net, np.array([1.0, 2.0]), constant_signal([3.0]), 5.0, 10)
    assert traj.shape == (2, 11)
    assert np.all(traj == np.array([[1.0], [2.0]]))


def test_rollout_blow_up_reports_step():
    net = rigged_net([[50.0]], tau=1.0)
    with pytest.raises(RolloutError) as exc:
        rollout(net, np.array([1.0]), constant_signal([0.0]), 1000.0, 1000)
    assert exc.value.step > 1


@pytest.mark.parametrize("mode", ["direct", "rknn", "direct_tau"])
def test_gradients_match_finite_differences(mode):
    net = random_net(mode, seed=2)
    batch = random_batch(net)
    _, grads = loss_and_gradients(net, batch)
    g = flatten_grads(grads)
    fd = fd_gradient(net, batch)
    scale = np.abs(g).max()
    assert np.all(np.abs(g - fd) <= 1e-6 * np.maximum(np.abs(g), 1e-3 * scale))


def test_perfect_targets_give_zero_loss_and_gradient():
    net = random_net("rknn", seed=5)
    batch = random_batch(net)
    pred = forward_rknn(net, batch.y, batch.mu)
    loss, grads = loss_and_gradients(net, (batch.y, batch.mu, pred))
    assert loss == pytest.approx(0.0, abs=1e-28)
    assert np.abs(flatten_grads(grads)).max() < 1e-14


def test_mode_mismatch():
    net = random_net("direct")
    with pytest.raises(UsageError):
        forward_rknn(net, np.zeros(3), np.zeros(2))
    with pytest.raises(UsageError):
        forward_direct_with_tau(net, np.zeros(3), np.zeros(2), 0.1)


def test_direct_tau_arity():
    net = random_net("direct_tau")
    assert net.core.n_in == net.n_r + net.n_mu + 1
    with pytest.raises(ShapeError):
        forward_direct_with_tau(net, np.zeros(4), np.zeros(2), 0.1)
    with pytest.raises(ShapeError):
        SurrogateNet(net.core, "direct", 0.3, net.normalizer)


def test_step_dispatch():
    net = rigged_net([[-1.0]], tau=0.1)
    assert np.array_equal(step(net, np.array([1.0]), np.array([0.0]), 0.05),
                          forward_rknn(net, np.array([1.0]), np.array([0.0]), 0.05))


def test_hidden_narrower_than_input_rejected():
    nz = Normalizer.identity(10, 2)
    with pytest.raises(UsageError):
        make_net("direct", nz, 1.0, TrainingConfig(hidden=8))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
       st.lists(st.floats(0.1, 10), min_size=3, max_size=3))
def test_normalizer_round_trip(x, scale):
    nz = Normalizer(np.array([1.0, -2.0, 5.0]), np.array(scale), np.zeros(1), np.ones(1),
                    np.ones(3))
    x = np.array(x)
    assert np.allclose(nz.denorm_state(nz.norm_state(x)), x, rtol=1e-12, atol=1e-9)


def test_zero_scale_rejected():
    with pytest.raises(ShapeError):
        Normalizer(np.zeros(2), np.array([1.0, 0.0]), np.zeros(1), np.ones(1), np.ones(2))


def decay_data(n=200, tau=0.1, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.uniform(0.5, 2.0, (n, 1))
    mu = np.zeros((n, 1))
    return TransitionData(y, mu, y * np.exp(-tau), np.full(n, tau), tau)


def test_training_is_deterministic():
    data = decay_data()
    cfg = TrainingConfig(epochs=20, batch_size=32, seed=3)
    net = make_net("direct", fit_normalizer(data), 0.1, cfg)
    a, ha = train(net, data, cfg)
    b, hb = train(net, data, cfg)
    assert ha == hb
    assert a.core.get_flat().tobytes() == b.core.get_flat().tobytes()


def test_stacked_members_equal_solo_runs():
    data = decay_data()
    cfgs = [TrainingConfig(epochs=15, batch_size=50, seed=s, learning_rate=3e-3,
                           lr_final=1e-4) for s in (0, 1, 2)]
    nz = fit_normalizer(data)
    nets = [make_net("rknn", nz, 0.1, c) for c in cfgs]
    stacked, hist = train_members(nets, data, cfgs)
    for net, cfg, s_net, s_hist in zip(nets, cfgs, stacked, hist):
        solo, solo_hist = train(net, data, cfg)
        assert np.array_equal(solo.core.get_flat(), s_net.core.get_flat())
        assert solo_hist == s_hist


def test_members_must_differ_only_in_seed():
    data = decay_data()
    nz = fit_normalizer(data)
    cfgs = [TrainingConfig(epochs=2, seed=0), TrainingConfig(epochs=3, seed=1)]
    with pytest.raises(UsageError):
        train_members([make_net("direct", nz, 0.1, c) for c in cfgs], data, cfgs)


def test_divergence_reports_checkpoint():
    data = decay_data()
    cfg = TrainingConfig(epochs=50, learning_rate=1e3, seed=0)
    net = make_net("direct", fit_normalizer(data), 0.1, cfg)
    with pytest.raises(TrainingDivergence) as exc:
        train(net, data, cfg)
    assert exc.value.checkpoint is not None
    assert np.all(np.isfinite(exc.value.checkpoint.core.get_flat()))


def test_identity_pairs_learn_identity():
    rng = np.random.default_rng(0)
    y = rng.normal(size=(300, 2))
    mu = rng.normal(size=(300, 1))
    data = TransitionData(y, mu, y, np.full(300, 1.0), 1.0)
    cfg = TrainingConfig(epochs=800, batch_size=64, learning_rate=3e-3, lr_final=1e-5, seed=1)
    nz = fit_normalizer(data)
    net, _ = train(make_net("direct", nz, 1.0, cfg), data, cfg)
    pred = forward_direct(net, y, mu)
    mse = np.mean(((pred - y) / nz.state_scale) ** 2)
    assert mse < 1e-4


def test_rknn_learns_decay_rhs():
    data = decay_data(n=400)
    cfg = TrainingConfig(epochs=400, batch_size=64, learning_rate=3e-3, lr_final=1e-5, seed=0,
                         activation="tanh")
    nz = fit_normalizer(data)
    net, _ = train(make_net("rknn", nz, 0.1, cfg), data, cfg)
    grid = np.linspace(0.6, 1.9, 30)[:, None]
    x = np.hstack([nz.norm_state(grid), nz.norm_param(np.zeros((30, 1)))])
    g = nz.rhs_scale * net.core(x)
    assert np.all(np.abs(g[:, 0] + grid[:, 0]) <= 0.05 * grid[:, 0])


def test_direct_one_step_decay():
    data = decay_data(n=400)
    cfg = TrainingConfig(epochs=300, batch_size=64, learning_rate=3e-3, lr_final=1e-5, seed=0)
    net, _ = train(make_net("direct", fit_normalizer(data), 0.1, cfg), data, cfg)
    grid = np.linspace(0.6, 1.9, 30)[:, None]
    pred = forward_direct(net, grid, np.zeros((30, 1)))
    assert np.abs(pred - grid * np.exp(-0.1)).max() < 1e-3 * 2


def test_config_validation():
    with pytest.raises(UsageError):
        TrainingConfig(epochs=0)
    with pytest.raises(UsageError):
        TrainingConfig(learning_rate=1e-3, lr_final=1e-2)
    with pytest.raises(UsageError):
        TrainingConfig(batch_size=-1)
    assert dataclasses.asdict(TrainingConfig()) == TrainingConfig().to_dict()
