"""Reward net: architecture, init statistics, gradients, training."""
import numpy as np
import pytest

from tanbr.reward_net import (
    NetConfig,
    RewardNet,
    TrainConfig,
    flatten_layers,
    forward,
    forward_batch,
    gradient,
    gradient_batch,
    init_params,
    load_params,
    loss_value,
    save_params,
    sgd_update,
    summed_data_gradient,
)


def finite_difference(net, x, direction, step=1e-5):
    """Central-difference oracle for grad_theta(direction^T f(x, theta))."""
    fd = np.empty_like(net.theta)
    for i in range(net.theta.shape[0]):
        plus = net.theta.copy()
        plus[i] += step
        minus = net.theta.copy()
        minus[i] -= step
        fp = float(direction @ forward(net.with_theta(plus), x))
        fm = float(direction @ forward(net.with_theta(minus), x))
        fd[i] = (fp - fm) / (2.0 * step)
    return fd


def random_smooth_case(rng, w_max=8):
    """Random (net, x, direction) with pre-activations away from relu kinks."""
    while True:
        k = int(rng.integers(2, 6))
        v = int(rng.integers(1, 5))
        w = int(rng.integers(2, w_max + 1))
        l = int(rng.integers(2, 4))
        net = init_params(NetConfig(k, v, width=w, depth=l), rng)
        e = rng.exponential(1.0, size=k)
        x = e / e.sum()
        direction = rng.normal(0.0, 1.0, size=v)
        # finite differences are only valid away from activation kinks
        margins = []
        a = x
        for m in net.layers()[:-1]:
            z = m @ a
            margins.append(np.min(np.abs(z)))
            a = np.maximum(z, 0.0)
        if min(margins) > 1e-3:
            return net, x, direction


class TestNetConfig:
    def test_param_count_formula(self):
        # p = wK + wV + w^2(L-1)
        cfg = NetConfig(input_dim=8, output_dim=8, width=64, depth=2)
        assert cfg.param_count == 64 * 8 + 64 * 8 + 64 * 64 * 1 == 5120

    def test_param_count_deeper(self):
        cfg = NetConfig(input_dim=3, output_dim=2, width=5, depth=4)
        assert cfg.param_count == 5 * 3 + 5 * 2 + 25 * 3

    def test_depth_below_two_rejected(self):
        with pytest.raises(ValueError):
            NetConfig(input_dim=2, output_dim=1, width=4, depth=1)


class TestInitParams:
    def test_same_seed_identical(self):
        cfg = NetConfig(4, 3, width=8, depth=2)
        a = init_params(cfg, np.random.default_rng(7))
        b = init_params(cfg, np.random.default_rng(7))
        assert np.array_equal(a.theta, b.theta)

    def test_variances(self):
        # hidden entries var 4/w, output entries var 2/w, ~1e5 draws each
        cfg = NetConfig(input_dim=50, output_dim=40, width=64, depth=2)
        rng = np.random.default_rng(0)
        draws = [init_params(cfg, rng) for _ in range(32)]
        hidden = np.concatenate([n.layers()[0].ravel() for n in draws])
        output = np.concatenate([n.layers()[-1].ravel() for n in draws])
        assert hidden.size > 1e5 and output.size > 7e4
        assert np.var(hidden) == pytest.approx(4.0 / 64, rel=0.05)
        assert np.var(output) == pytest.approx(2.0 / 64, rel=0.05)

    def test_flatten_unflatten_roundtrip(self):
        cfg = NetConfig(3, 2, width=4, depth=3)
        net = init_params(cfg, np.random.default_rng(1))
        assert np.array_equal(flatten_layers(net.layers()), net.theta)


class TestForward:
    def test_zero_output_layer_gives_zero(self):
        cfg = NetConfig(3, 2, width=4, depth=2)
        net = init_params(cfg, np.random.default_rng(2))
        mats = [m.copy() for m in net.layers()]
        mats[-1][:] = 0.0
        zeroed = RewardNet(cfg, flatten_layers(mats))
        assert np.array_equal(forward(zeroed, np.array([0.2, 0.3, 0.5])), np.zeros(2))

    def test_hand_evaluated_tiny_net(self):
        # width 1, depth 2: input map [2], hidden block [1], output [3]
        cfg = NetConfig(input_dim=1, output_dim=1, width=1, depth=2)
        net = RewardNet(cfg, np.array([2.0, 1.0, 3.0]))
        assert forward(net, np.array([0.5]))[0] == pytest.approx(3.0)

    def test_rectifier_dead_region(self):
        cfg = NetConfig(input_dim=1, output_dim=1, width=1, depth=2)
        net = RewardNet(cfg, np.array([2.0, 1.0, 3.0]))
        assert forward(net, np.array([-0.5]))[0] == 0.0

    def test_purity_no_mutation(self):
        cfg = NetConfig(3, 2, width=4, depth=2)
        net = init_params(cfg, np.random.default_rng(3))
        before = net.theta.copy()
        forward(net, np.array([0.2, 0.3, 0.5]))
        gradient(net, np.array([0.2, 0.3, 0.5]), np.array([1.0, 0.0]))
        assert np.array_equal(net.theta, before)

    def test_batch_matches_single(self):
        cfg = NetConfig(4, 3, width=6, depth=3)
        net = init_params(cfg, np.random.default_rng(4))
        xs = np.random.default_rng(5).dirichlet(np.ones(4), size=10)
        batch = forward_batch(net, xs)
        for i, x in enumerate(xs):
            assert np.allclose(batch[i], forward(net, x))

    def test_dimension_mismatch(self):
        cfg = NetConfig(3, 2, width=4, depth=2)
        net = init_params(cfg, np.random.default_rng(6))
        with pytest.raises(ValueError):
            forward(net, np.array([0.5, 0.5]))


class TestGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        worst = 0.0
        for _ in range(25):
            net, x, d = random_smooth_case(rng)
            g = gradient(net, x, d)
            fd = finite_difference(net, x, d)
            rel = np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0))
            worst = max(worst, rel)
        assert worst <= 1e-5

    def test_zero_output_layer_zeroes_hidden_grads(self):
        cfg = NetConfig(3, 2, width=4, depth=2)
        net = init_params(cfg, np.random.default_rng(8))
        mats = [m.copy() for m in net.layers()]
        mats[-1][:] = 0.0
        zeroed = RewardNet(cfg, flatten_layers(mats))
        g = gradient(zeroed, np.array([0.2, 0.3, 0.5]), np.array([1.0, 1.0]))
        hidden_size = cfg.param_count - 2 * 4
        assert np.array_equal(g[:hidden_size], np.zeros(hidden_size))
        assert np.any(g[hidden_size:] != 0.0)

    def test_zero_direction_zero_gradient(self):
        cfg = NetConfig(3, 2, width=4, depth=2)
        net = init_params(cfg, np.random.default_rng(9))
        g = gradient(net, np.array([0.2, 0.3, 0.5]), np.zeros(2))
        assert np.array_equal(g, np.zeros_like(g))

    def test_batch_matches_single(self):
        cfg = NetConfig(4, 2, width=5, depth=3)
        net = init_params(cfg, np.random.default_rng(10))
        rng = np.random.default_rng(11)
        xs = rng.dirichlet(np.ones(4), size=7)
        ds = rng.normal(size=(7, 2))
        batch = gradient_batch(net, xs, ds)
        for i in range(7):
            assert np.allclose(batch[i], gradient(net, xs[i], ds[i]))

    def test_summed_gradient_matches_row_sum(self):
        cfg = NetConfig(4, 2, width=5, depth=3)
        net = init_params(cfg, np.random.default_rng(12))
        rng = np.random.default_rng(13)
        xs = rng.dirichlet(np.ones(4), size=9)
        ds = rng.normal(size=(9, 2))
        assert np.allclose(
            summed_data_gradient(net, xs, ds), gradient_batch(net, xs, ds).sum(axis=0)
        )


class TestSgdUpdate:
    def test_interpolating_net_is_stationary(self):
        cfg = NetConfig(2, 1, width=3, depth=2)
        net = init_params(cfg, np.random.default_rng(14))
        x = np.array([0.4, 0.6])
        target = forward(net, x)
        out = sgd_update(
            net, [(x, target)], TrainConfig(step_size=0.1, sgd_steps_per_round=5),
            theta0=net.theta.copy(),
        )
        assert np.allclose(out.theta, net.theta)

    def test_large_lambda_no_effect_at_theta0(self):
        # regularizer gradient vanishes at theta = theta0: first step equals
        # the pure data step regardless of lambda
        cfg = NetConfig(2, 1, width=3, depth=2)
        net = init_params(cfg, np.random.default_rng(15))
        x = np.array([0.4, 0.6])
        y = forward(net, x) + 1.0
        small = sgd_update(
            net, [(x, y)],
            TrainConfig(step_size=1e-3, regularization=1e-6, sgd_steps_per_round=1),
            theta0=net.theta.copy(),
        )
        big = sgd_update(
            net, [(x, y)],
            TrainConfig(step_size=1e-3, regularization=1e6, sgd_steps_per_round=1),
            theta0=net.theta.copy(),
        )
        assert np.allclose(small.theta, big.theta, atol=1e-8)

    def test_loss_decreases_monotonically_on_fixture(self):
        cfg = NetConfig(3, 2, width=8, depth=2)
        net = init_params(cfg, np.random.default_rng(16))
        theta0 = net.theta.copy()
        x = np.array([0.2, 0.3, 0.5])
        y = np.array([0.8, 0.1])
        config = TrainConfig(step_size=1e-3, sgd_steps_per_round=1)
        losses = [loss_value(net, x[None, :], y[None, :], 1.0, theta0)]
        current = net
        for _ in range(100):
            current = sgd_update(current, [(x, y)], config, theta0)
            losses.append(loss_value(current, x[None, :], y[None, :], 1.0, theta0))
        diffs = np.diff(losses)
        assert np.all(diffs < 0.0)

    def test_empty_history_rejected(self):
        cfg = NetConfig(2, 1, width=3, depth=2)
        net = init_params(cfg, np.random.default_rng(18))
        with pytest.raises(ValueError):
            sgd_update(net, [], TrainConfig(), theta0=net.theta)

    def test_divergence_raises(self):
        cfg = NetConfig(2, 1, width=3, depth=2)
        net = init_params(cfg, np.random.default_rng(19))
        with pytest.raises(FloatingPointError):
            sgd_update(
                net,
                [(np.array([0.4, 0.6]), np.array([5.0]))],
                TrainConfig(step_size=1e9, sgd_steps_per_round=200),
                theta0=net.theta.copy(),
            )

    def test_history_cap(self):
        cfg = NetConfig(2, 1, width=3, depth=2)
        net = init_params(cfg, np.random.default_rng(20))
        theta0 = net.theta.copy()
        x_old = (np.array([1.0, 0.0]), np.array([0.0]))
        x_new = (np.array([0.0, 1.0]), np.array([1.0]))
        capped = sgd_update(
            net, [x_old, x_new],
            TrainConfig(step_size=1e-3, sgd_steps_per_round=3, history_cap=1),
            theta0,
        )
        only_new = sgd_update(
            net, [x_new],
            TrainConfig(step_size=1e-3, sgd_steps_per_round=3),
            theta0,
        )
        assert np.array_equal(capped.theta, only_new.theta)


class TestSaveLoad:
    def test_roundtrip(self, tmp_path):
        cfg = NetConfig(4, 3, width=6, depth=2)
        net = init_params(cfg, np.random.default_rng(21))
        path = tmp_path / "params.bin"
        save_params(net, path, seed=21)
        loaded, seed = load_params(path)
        assert seed == 21
        assert loaded.config == cfg
        assert np.array_equal(loaded.theta, net.theta)
