"""Tests for the dense numerical kernel."""

import math

import numpy as np
import pytest

from scenario_bands.numerics import (
    ACTIVATIONS,
    AdamState,
    MlpParams,
    adam_step,
    grad_check,
    init_mlp,
    make_rng,
    mlp_backward,
    mlp_forward,
    nearest_rank,
    nearest_rank_quantile,
    sample_gaussian,
)


def random_net(rng, max_width=8, max_depth=3, in_dim=None, out_dim=None,
               activation_pool=("tanh", "logistic", "identity")):
    depth = int(rng.integers(1, max_depth + 1))
    dims = [in_dim if in_dim is not None else int(rng.integers(1, max_width + 1))]
    for _ in range(depth):
        dims.append(int(rng.integers(1, max_width + 1)))
    if out_dim is not None:
        dims[-1] = out_dim
    acts = [str(rng.choice(activation_pool)) for _ in range(depth)]
    return init_mlp(rng, dims, acts)


def interleave(weight_grads, bias_grads):
    out = []
    for w, b in zip(weight_grads, bias_grads):
        out.append(w)
        out.append(b)
    return out


class TestActivations:
    def test_identity_and_relu_values(self):
        x = np.array([-2.0, 0.0, 3.0])
        assert np.array_equal(ACTIVATIONS["identity"].f(x), x)
        assert np.array_equal(ACTIVATIONS["relu"].f(x), [0.0, 0.0, 3.0])

    def test_logistic_stable_at_extremes(self):
        x = np.array([-800.0, 800.0])
        y = ACTIVATIONS["logistic"].f(x)
        assert np.all(np.isfinite(y))
        assert y[0] == pytest.approx(0.0, abs=1e-300)
        assert y[1] == pytest.approx(1.0)

    @pytest.mark.parametrize("name", ["relu", "tanh", "logistic", "identity"])
    def test_first_derivative_matches_fd(self, name):
        act = ACTIVATIONS[name]
        # stay away from relu's kink, where the fd estimate is undefined
        x = np.linspace(-3.0, 3.0, 41) + 0.007
        h = 1e-6
        fd = (act.f(x + h) - act.f(x - h)) / (2 * h)
        assert np.allclose(act.df(x), fd, atol=1e-7)

    @pytest.mark.parametrize("name", ["tanh", "logistic", "identity"])
    def test_second_derivative_matches_fd(self, name):
        act = ACTIVATIONS[name]
        x = np.linspace(-3.0, 3.0, 41)
        h = 1e-5
        fd = (act.df(x + h) - act.df(x - h)) / (2 * h)
        assert np.allclose(act.d2f(x), fd, atol=1e-6)


class TestMlpParams:
    def test_dimension_chain_enforced(self):
        rng = make_rng(0)
        with pytest.raises(ValueError):
            MlpParams(
                weights=[rng.standard_normal((3, 4)), rng.standard_normal((5, 2))],
                biases=[np.zeros(4), np.zeros(2)],
                activations=["tanh", "identity"],
            )

    def test_arrays_round_trip(self):
        rng = make_rng(1)
        net = random_net(rng)
        rebuilt = net.with_arrays([a.copy() for a in net.arrays()])
        for a, b in zip(net.arrays(), rebuilt.arrays()):
            assert np.array_equal(a, b)

    def test_init_mlp_shapes_and_scale(self):
        rng = make_rng(2)
        net = init_mlp(rng, [100, 50, 10], ["tanh", "identity"])
        assert net.layer_dims == [100, 50, 10]
        assert all(np.all(b == 0.0) for b in net.biases)
        # weights ~ N(0, 2/fan_in): sample std should sit near sqrt(2/fan_in)
        std0 = net.weights[0].std()
        assert abs(std0 - math.sqrt(2 / 100)) < 0.02


class TestForwardBackward:
    def test_identity_single_layer_backward(self):
        w = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 1.0]])
        net = MlpParams(weights=[w], biases=[np.zeros(2)], activations=["identity"])
        x = np.array([0.5, -1.0, 2.0])
        out, tape = mlp_forward(net, x)
        assert np.allclose(out, x @ w)
        wg, bg, xg = mlp_backward(net, tape, np.array([1.0, 0.0]))
        assert np.allclose(xg, w[:, 0])
        assert np.allclose(wg[0], np.outer(x, [1.0, 0.0]))
        assert np.allclose(bg[0], [1.0, 0.0])

    def test_zero_output_gradient_gives_zero_grads(self):
        rng = make_rng(3)
        net = random_net(rng)
        x = rng.standard_normal((4, net.input_dim))
        _, tape = mlp_forward(net, x)
        wg, bg, xg = mlp_backward(net, tape, np.zeros((4, net.output_dim)))
        assert all(np.all(g == 0.0) for g in wg)
        assert all(np.all(g == 0.0) for g in bg)
        assert np.all(xg == 0.0)

    def test_batched_equals_stacked_single_rows(self):
        rng = make_rng(4)
        net = random_net(rng)
        x = rng.standard_normal((5, net.input_dim))
        batched, _ = mlp_forward(net, x)
        rows = np.stack([mlp_forward(net, x[i])[0] for i in range(5)])
        assert np.allclose(batched, rows, atol=1e-14)

    def test_backward_shape_conservation(self):
        rng = make_rng(5)
        for _ in range(10):
            net = random_net(rng)
            x = rng.standard_normal((3, net.input_dim))
            out, tape = mlp_forward(net, x)
            wg, bg, xg = mlp_backward(net, tape, np.ones_like(out))
            assert xg.shape == x.shape
            for g, w in zip(wg, net.weights):
                assert g.shape == w.shape
            for g, b in zip(bg, net.biases):
                assert g.shape == b.shape

    def test_gradient_suite_random_nets(self):
        """20+ random architectures match central finite differences."""
        rng = make_rng(6)
        worst = 0.0
        for trial in range(24):
            net = random_net(rng)
            x = rng.standard_normal((3, net.input_dim))
            proj = rng.standard_normal(net.output_dim)

            def loss_and_grad(arrays, net=net, x=x, proj=proj):
                candidate = net.with_arrays(arrays)
                out, tape = mlp_forward(candidate, x)
                wg, bg, _ = mlp_backward(candidate, tape,
                                         np.broadcast_to(proj, out.shape).copy())
                return float((out * proj).sum()), interleave(wg, bg)

            err = grad_check(loss_and_grad, net.arrays())
            worst = max(worst, err)
        assert worst < 1e-4, f"worst relative error {worst}"


class TestGradCheck:
    def test_quadratic_is_nearly_exact(self):
        rng = make_rng(7)
        p = rng.standard_normal(6)

        def loss(arrays):
            (q,) = arrays
            return float(q @ q), [2.0 * q]

        assert grad_check(loss, [p]) < 1e-8

    def test_wrong_gradient_flagged(self):
        rng = make_rng(8)
        p = rng.standard_normal(6)

        def loss(arrays):
            (q,) = arrays
            return float(q @ q), [4.0 * q]  # deliberately doubled

        assert grad_check(loss, [p]) > 0.3

    def test_restores_parameters(self):
        p = np.array([1.0, 2.0, 3.0])
        snapshot = p.copy()

        def loss(arrays):
            (q,) = arrays
            return float(q @ q), [2.0 * q]

        grad_check(loss, [p])
        assert np.array_equal(p, snapshot)


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        rng = make_rng(9)
        arrays = [rng.standard_normal((3, 2)), rng.standard_normal(2)]
        state = AdamState.fresh(arrays, learning_rate=0.1, beta1=0.9, beta2=0.999)
        new_arrays, new_state = adam_step(arrays, [np.zeros((3, 2)), np.zeros(2)], state)
        for a, b in zip(arrays, new_arrays):
            assert np.array_equal(a, b)
        assert new_state.step_count == 1
        assert all(np.all(m == 0.0) for m in new_state.first_moment)

    def test_first_step_magnitude_is_learning_rate(self):
        arrays = [np.array([0.0])]
        state = AdamState.fresh(arrays, learning_rate=0.1, beta1=0.9, beta2=0.999)
        new_arrays, _ = adam_step(arrays, [np.array([1.0])], state)
        # bias correction makes the first step exactly lr up to epsilon
        assert new_arrays[0][0] == pytest.approx(-0.1, rel=1e-6)

    def test_successive_steps_move_against_gradient(self):
        arrays = [np.array([0.0])]
        state = AdamState.fresh(arrays, learning_rate=0.05, beta1=0.5, beta2=0.9)
        prev = 0.0
        for _ in range(5):
            arrays, state = adam_step(arrays, [np.array([1.0])], state)
            assert arrays[0][0] < prev
            prev = arrays[0][0]

    def test_shape_mismatch_rejected(self):
        arrays = [np.zeros((2, 2))]
        state = AdamState.fresh(arrays, learning_rate=0.1, beta1=0.9, beta2=0.999)
        with pytest.raises(ValueError):
            adam_step(arrays, [np.zeros(3)], state)

    def test_non_finite_gradient_rejected(self):
        arrays = [np.zeros(2)]
        state = AdamState.fresh(arrays, learning_rate=0.1, beta1=0.9, beta2=0.999)
        with pytest.raises(FloatingPointError):
            adam_step(arrays, [np.array([1.0, np.nan])], state)


class TestSampling:
    def test_same_seed_bit_identical(self):
        a = sample_gaussian(make_rng(42), 100, 1.5)
        b = sample_gaussian(make_rng(42), 100, 1.5)
        assert np.array_equal(a, b)

    def test_sigma_scaling_is_exact(self):
        """Scale-last sampling makes the sigma ratio elementwise exact."""
        a = sample_gaussian(make_rng(11), 512, 1.0)
        b = sample_gaussian(make_rng(11), 512, 3.0)
        assert np.array_equal(b, a * 3.0)

    def test_empty_draw(self):
        assert sample_gaussian(make_rng(0), 0, 1.0).shape == (0,)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ValueError):
            sample_gaussian(make_rng(0), 4, 0.0)

    def test_moments_roughly_match(self):
        x = sample_gaussian(make_rng(12), 200_000, 2.0)
        assert abs(x.mean()) < 0.02
        assert abs(x.std() - 2.0) < 0.02


class TestNearestRank:
    def test_hand_cases(self):
        assert nearest_rank(0.05, 100) == 5
        assert nearest_rank(0.95, 100) == 95
        assert nearest_rank(0.5, 101) == 51
        assert nearest_rank(1.0, 7) == 7
        # ceil must not be pushed up by float excess in q*n
        assert nearest_rank(0.95, 20) == 19

    def test_quantile_on_known_grid(self):
        values = np.arange(1, 101) / 100.0
        assert nearest_rank_quantile(values, 0.05) == pytest.approx(0.05)
        assert nearest_rank_quantile(values, 0.95) == pytest.approx(0.95)

    def test_quantile_ignores_input_order(self):
        rng = make_rng(13)
        values = rng.standard_normal(37)
        shuffled = values.copy()
        rng.shuffle(shuffled)
        for q in (0.1, 0.5, 0.9):
            assert nearest_rank_quantile(values, q) == nearest_rank_quantile(shuffled, q)
