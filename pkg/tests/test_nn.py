"""Tests for the network core: kernels, forward/backward, optimizer.

Oracles come first: a high-precision reference for the squareplus tail, a
straight-line re-implementation of the layer formulas, and central finite
differences for every gradient path.
"""

import mpmath
import numpy as np
import pytest

from slacksac.nn import (
    ConfigurationError,
    GradBuffer,
    Mlp,
    MlpParams,
    OptimizerState,
    StateError,
    optimizer_step,
    rms_norm,
    squareplus,
    squareplus_sigmoid,
)


def squareplus_highprec(x, b=4.0):
    """50-digit evaluation of (x + sqrt(x^2 + b)) / 2."""
    with mpmath.workdps(50):
        xm = mpmath.mpf(repr(float(x)))
        return float((xm + mpmath.sqrt(xm * xm + b)) / 2)


def forward_oracle(params, x):
    """Straight-line forward pass for a network of any depth.

    Written independently of Mlp.forward: explicit loops, no shared code
    beyond numpy itself.
    """
    h = np.asarray(x, dtype=np.float64)
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        h = layer.weight @ h + layer.bias
        if i < last:
            r = 1.0 / np.sqrt(np.mean(h * h) + 1e-8)
            n = layer.gain * (h * r)
            h = (n + np.sqrt(n * n + 4.0)) / 2.0
    return h


def fd_param_grads(net, x, cotangent, h=1e-5):
    """Central finite differences of sum(forward(x) * cotangent) per parameter."""
    out = []
    for _, arr in net.params.named_arrays():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = np.sum(net.forward(x) * cotangent)
            arr[idx] = orig - h
            down = np.sum(net.forward(x) * cotangent)
            arr[idx] = orig
            g[idx] = (up - down) / (2.0 * h)
        out.append(g)
    return out


def fd_input_grad(net, x, cotangent, h=1e-5):
    """Central finite differences of sum(forward(x) * cotangent) per input."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        up = np.sum(net.forward(x) * cotangent)
        x[idx] = orig - h
        down = np.sum(net.forward(x) * cotangent)
        x[idx] = orig
        g[idx] = (up - down) / (2.0 * h)
    return g


def max_rel_err(a, b, floor=1e-6):
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), floor))


class TestSquareplus:
    def test_known_values(self):
        assert squareplus(0.0) == pytest.approx(1.0, abs=1e-15)
        assert squareplus(3.0) == pytest.approx((3.0 + np.sqrt(13.0)) / 2.0, abs=1e-15)

    def test_negative_tail_against_high_precision(self):
        for x in (-10.0, -50.0, -300.0, -1e4):
            got = float(squareplus(x))
            want = squareplus_highprec(x)
            assert got == pytest.approx(want, rel=1e-12)
        v = float(squareplus(-50.0))
        assert 0.0 < v < 0.05
        # leading tail term b/(-4x)
        assert v == pytest.approx(4.0 / 200.0, rel=1e-3)

    def test_monotone_and_positive(self):
        x = np.linspace(-80.0, 80.0, 4001)
        y = squareplus(x)
        assert np.all(y > 0.0)
        assert np.all(np.diff(y) > 0.0)

    def test_no_overflow_at_extremes(self):
        y = squareplus(np.array([-1e300, 1e300]))
        assert np.isfinite(y[0]) and y[0] >= 0.0
        assert np.isfinite(y[1])

    def test_bad_constant_rejected(self):
        with pytest.raises(ConfigurationError):
            squareplus(1.0, b=0.0)


class TestSquareplusSigmoid:
    def test_known_values(self):
        assert squareplus_sigmoid(0.0) == pytest.approx(0.5, abs=1e-15)
        assert squareplus_sigmoid(2.0) == pytest.approx((1.0 + 2.0 / np.sqrt(8.0)) / 2.0, abs=1e-15)
        assert squareplus_sigmoid(-2.0) == pytest.approx(1.0 - squareplus_sigmoid(2.0), abs=1e-15)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-100.0, 100.0, size=257)
        np.testing.assert_allclose(squareplus_sigmoid(x) + squareplus_sigmoid(-x), 1.0, atol=1e-12)

    def test_is_derivative_of_squareplus(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-5.0, 5.0, size=64)
        h = 1e-6
        fd = (squareplus(x + h) - squareplus(x - h)) / (2.0 * h)
        np.testing.assert_allclose(squareplus_sigmoid(x), fd, atol=1e-8)

    def test_range_and_monotone(self):
        x = np.linspace(-1e6, 1e6, 1001)
        y = squareplus_sigmoid(x)
        assert np.all((y > 0.0) & (y < 1.0))
        assert np.all(np.diff(y) > 0.0)


class TestRmsNorm:
    def test_unit_vector(self):
        np.testing.assert_allclose(rms_norm(np.ones(4), np.ones(4), eps_norm=0.0), np.ones(4), atol=1e-15)

    def test_three_four(self):
        got = rms_norm(np.array([3.0, 4.0]), np.ones(2), eps_norm=0.0)
        np.testing.assert_allclose(got, np.array([3.0, 4.0]) / np.sqrt(12.5), atol=1e-15)

    def test_positive_scale_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=9)
        for c in (0.5, 2.0, 1e4):
            np.testing.assert_allclose(
                rms_norm(c * x, np.ones(9), eps_norm=0.0),
                rms_norm(x, np.ones(9), eps_norm=0.0),
                atol=1e-12,
            )


class TestForward:
    def test_zero_network_returns_output_bias(self):
        net = Mlp([3, 4, 2], seed=0)
        for layer in net.params.layers:
            layer.weight[...] = 0.0
        net.params.layers[-1].bias[...] = [0.7, -1.3]
        np.testing.assert_allclose(net.forward(np.ones(3)), [0.7, -1.3], atol=1e-15)

    def test_single_linear_identity(self):
        net = Mlp([2, 2], seed=0)
        net.params.layers[0].weight[...] = np.eye(2)
        net.params.layers[0].bias[...] = 0.0
        x = np.array([0.3, -0.8])
        np.testing.assert_allclose(net.forward(x), x, atol=1e-15)

    def test_matches_straight_line_oracle(self):
        net = Mlp([2, 2, 2], seed=11)
        x = np.array([0.1, -0.2])
        np.testing.assert_allclose(net.forward(x), forward_oracle(net.params, x), atol=1e-12)

    def test_matches_oracle_deeper_and_batched(self):
        net = Mlp([3, 5, 4, 2], seed=12)
        rng = np.random.default_rng(3)
        xs = rng.normal(size=(6, 3))
        got = net.forward(xs)
        want = np.stack([forward_oracle(net.params, x) for x in xs])
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_deterministic_and_finite(self):
        net = Mlp([4, 8, 8, 1], seed=5)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(7, 4)) * 10.0
        a = net.forward(x)
        b = net.forward(x)
        assert np.array_equal(a, b)
        assert np.all(np.isfinite(a))

    def test_dimension_mismatch(self):
        net = Mlp([3, 2], seed=0)
        with pytest.raises(ConfigurationError):
            net.forward(np.ones(4))

    def test_seed_reproducible_init(self):
        a = MlpParams([3, 5, 2], seed=7)
        b = MlpParams([3, 5, 2], seed=7)
        assert np.array_equal(a.flatten(), b.flatten())
        assert not np.array_equal(a.flatten(), MlpParams([3, 5, 2], seed=8).flatten())

    def test_init_ranges(self):
        p = MlpParams([9, 4], seed=3)
        bound = np.sqrt(1.0 / 9.0)
        assert np.all(np.abs(p.layers[0].weight) <= bound)
        assert np.all(p.layers[0].bias == 0.0)
        assert np.all(p.layers[0].gain == 1.0)

    def test_bad_sizes_rejected(self):
        with pytest.raises(ConfigurationError):
            MlpParams([4], seed=0)
        with pytest.raises(ConfigurationError):
            MlpParams([4, 0, 2], seed=0)


class TestBackward:
    def test_zero_output_has_zero_grads(self):
        net = Mlp([2, 3, 2], seed=0)
        for layer in net.params.layers:
            layer.weight[...] = 0.0
        out = net.forward(np.array([0.5, -0.5]))
        assert np.all(out == 0.0)
        # loss = 0.5 * ||out||^2, upstream = out = 0 at the output layer
        net.backward(out)
        for _, g in net.grads.named_arrays():
            assert np.all(g == 0.0)

    def test_single_neuron_chain_rule(self):
        net = Mlp([1, 1], seed=0)
        net.params.layers[0].weight[...] = [[2.0]]
        net.params.layers[0].bias[...] = [0.1]
        net.forward(np.array([3.0]))
        net.backward(np.array([1.0]))
        assert net.grads.layers[0].weight[0, 0] == pytest.approx(3.0, abs=1e-15)
        assert net.grads.layers[0].bias[0] == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("sizes", [[4, 8, 8, 1], [3, 16, 2], [2, 7, 5, 3], [4, 1]])
    def test_param_grads_match_finite_differences(self, sizes):
        net = Mlp(sizes, seed=21)
        rng = np.random.default_rng(22)
        x = rng.normal(size=(5, sizes[0]))
        cot = rng.normal(size=(5, sizes[-1]))
        fd = fd_param_grads(net, x, cot)
        net.forward(x)
        net.zero_grads()
        net.backward(cot)
        for (_, got), want in zip(net.grads.named_arrays(), fd):
            assert max_rel_err(got, want) < 1e-4

    def test_input_grad_matches_finite_differences(self):
        net = Mlp([4, 8, 8, 2], seed=23)
        rng = np.random.default_rng(24)
        x = rng.normal(size=(3, 4))
        cot = rng.normal(size=(3, 2))
        fd = fd_input_grad(net, x, cot)
        net.forward(x)
        got = net.backward(cot, accumulate=False)
        assert max_rel_err(got, fd) < 1e-4

    def test_accumulation_is_additive(self):
        net = Mlp([2, 4, 1], seed=25)
        x = np.array([[0.2, 0.9]])
        cot = np.array([[1.0]])
        net.forward(x)
        net.zero_grads()
        net.backward(cot)
        once = [g.copy() for _, g in net.grads.named_arrays()]
        net.backward(cot)
        for (_, g), o in zip(net.grads.named_arrays(), once):
            np.testing.assert_allclose(g, 2.0 * o, atol=1e-15)

    def test_accumulate_false_leaves_grads(self):
        net = Mlp([2, 4, 1], seed=26)
        net.forward(np.array([0.2, 0.9]))
        net.zero_grads()
        net.backward(np.array([1.0]), accumulate=False)
        for _, g in net.grads.named_arrays():
            assert np.all(g == 0.0)

    def test_backward_before_forward(self):
        net = Mlp([2, 2], seed=0)
        with pytest.raises(StateError):
            net.backward(np.ones(2))

    def test_upstream_shape_checked(self):
        net = Mlp([2, 3], seed=0)
        net.forward(np.ones((4, 2)))
        with pytest.raises(ConfigurationError):
            net.backward(np.ones((4, 2)))


class TestOptimizer:
    def test_zero_grads_null_step(self):
        net = Mlp([2, 3, 1], seed=0)
        state = OptimizerState.for_params(net.params)
        before = net.params.flatten()
        net.zero_grads()
        optimizer_step(state, net.params, net.grads)
        assert np.array_equal(net.params.flatten(), before)
        assert state.step_count == 1

    def test_first_step_is_signed_learning_rate(self):
        net = Mlp([2, 3, 1], seed=1)
        lr = 3e-4
        state = OptimizerState.for_params(net.params, learning_rate=lr)
        before = net.params.flatten()
        rng = np.random.default_rng(6)
        for _, g in net.grads.named_arrays():
            g[...] = np.where(rng.uniform(size=g.shape) < 0.5, -1.0, 1.0)
        signs = np.concatenate([g.ravel() for _, g in net.grads.named_arrays()])
        optimizer_step(state, net.params, net.grads)
        delta = net.params.flatten() - before
        np.testing.assert_allclose(delta, -lr * signs, atol=1e-9)

    def test_scalar_quadratic_convergence(self):
        # f(w) = (w - 3)^2 from w = 0, lr = 0.1, 200 steps
        params = MlpParams([1, 1], seed=0)
        params.layers[0].weight[...] = [[0.0]]
        grads = GradBuffer(params)
        state = OptimizerState.for_params(params, learning_rate=0.1)
        for _ in range(200):
            w = params.layers[0].weight[0, 0]
            grads.zero()
            grads.layers[0].weight[0, 0] = 2.0 * (w - 3.0)
            optimizer_step(state, params, grads)
        assert abs(params.layers[0].weight[0, 0] - 3.0) < 0.05
        assert state.step_count == 200

    def test_nonfinite_grad_skipped_and_counted(self):
        net = Mlp([2, 3, 1], seed=2)
        state = OptimizerState.for_params(net.params, learning_rate=0.1)
        net.zero_grads()
        for _, g in net.grads.named_arrays():
            g[...] = 1.0
        net.grads.layers[0].weight[0, 0] = np.nan
        w_before = net.params.layers[0].weight.copy()
        b_before = net.params.layers[0].bias.copy()
        optimizer_step(state, net.params, net.grads)
        assert state.skipped_updates == 1
        assert np.array_equal(net.params.layers[0].weight, w_before)
        assert not np.array_equal(net.params.layers[0].bias, b_before)
        assert np.all(np.isfinite(net.params.flatten()))

    def test_finite_params_under_large_grads(self):
        net = Mlp([3, 4, 2], seed=3)
        state = OptimizerState.for_params(net.params, learning_rate=1e-2)
        rng = np.random.default_rng(7)
        for _ in range(50):
            for _, g in net.grads.named_arrays():
                g[...] = rng.normal(scale=1e6, size=g.shape)
            optimizer_step(state, net.params, net.grads)
        assert np.all(np.isfinite(net.params.flatten()))

    def test_bad_learning_rate(self):
        net = Mlp([2, 2], seed=0)
        state = OptimizerState.for_params(net.params, learning_rate=-1.0)
        with pytest.raises(ConfigurationError):
            optimizer_step(state, net.params, net.grads)
