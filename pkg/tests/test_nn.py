"""Encoding shapes, MLP backprop against finite differences, Adam, schedule."""

import numpy as np
import pytest

from viewmpi.nn import (AdamState, Layer, Mlp, adam_step, encode_position,
                        encode_view, glorot_uniform, lr_schedule, make_mlp,
                        mlp_backward, mlp_forward, positional_encode)

NORMS = ((0.0, 31.0), (0.0, 23.0), (0.0, 7.0))


class TestPositionalEncoding:
    def test_zero_input(self):
        assert np.allclose(positional_encode(0.0, 2), [0, 1, 0, 1])

    def test_unit_input_one_freq(self):
        assert np.allclose(positional_encode(1.0, 1), [1, 0], atol=1e-15)

    def test_unit_input_two_freqs(self):
        # second pair is sin(pi), cos(pi)
        assert np.allclose(positional_encode(1.0, 2), [1, 0, 0, -1], atol=1e-12)

    def test_position_dim_is_56(self):
        out = encode_position(3.0, 11.0, 2.0, NORMS)
        assert out.shape == (56,)
        batch = encode_position(np.zeros((4, 5)), np.ones((4, 5)), np.full((4, 5), 2.0), NORMS)
        assert batch.shape == (4, 5, 56)

    def test_view_dim_is_12(self):
        assert encode_view(0.1, -0.2).shape == (12,)

    def test_midrange_encodes_to_sin0_cos1(self):
        out = encode_position(15.5, 11.5, 3.5, NORMS)
        assert np.allclose(out[0::2], 0.0, atol=1e-12)
        assert np.allclose(out[1::2], 1.0, atol=1e-12)

    def test_top_of_range_first_pair(self):
        out = encode_position(31.0, 11.5, 3.5, NORMS)
        assert out[0] == pytest.approx(1.0, abs=1e-12)
        assert out[1] == pytest.approx(0.0, abs=1e-12)


class TestMlp:
    def test_alpha_bias_init_output(self):
        # all-zero weights with a -5 alpha bias: sigmoid(-5)
        layers = [Layer(np.zeros((4, 8)), np.zeros(8)),
                  Layer(np.zeros((8, 3)), np.array([-5.0, 0.0, 0.0]), "linear")]
        net = Mlp(layers, head_activations=["sigmoid", "tanh", "tanh"])
        out, _ = mlp_forward(net, np.zeros(4))
        assert out[0] == pytest.approx(0.0066929, abs=1e-7)
        assert out[1] == 0.0 and out[2] == 0.0

    def test_identity_linear_layer(self):
        net = Mlp([Layer(np.eye(5), np.zeros(5), "linear")])
        x = np.arange(5.0)
        out, _ = mlp_forward(net, x)
        assert np.array_equal(out, x)

    def test_dimension_mismatch_raises(self):
        net = Mlp([Layer(np.eye(5), np.zeros(5), "linear")])
        with pytest.raises(ValueError):
            mlp_forward(net, np.zeros(4))

    def test_linear_layer_grads_closed_form(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(4, 3))
        net = Mlp([Layer(w, np.zeros(3), "linear")])
        x = rng.normal(size=4)
        g = rng.normal(size=3)
        _, cache = mlp_forward(net, x)
        (dw, db), dx = mlp_backward(net, cache, g)
        assert np.allclose(dw, np.outer(x, g), atol=1e-12)
        assert np.allclose(db, g, atol=1e-12)
        assert np.allclose(dx, w @ g, atol=1e-12)

    def test_sigmoid_head_derivative_at_zero(self):
        net = Mlp([Layer(np.zeros((2, 1)), np.zeros(1), "linear")],
                  head_activations=["sigmoid"])
        _, cache = mlp_forward(net, np.zeros(2))
        (_, db), _ = mlp_backward(net, cache, np.ones(1))
        assert db[0] == pytest.approx(0.25, abs=1e-12)

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        hidden = int(rng.integers(4, 17))
        layers = int(rng.integers(1, 4))
        net = make_mlp(rng, 5, hidden, layers, 3,
                       head_activations=["sigmoid", "tanh", "linear"])
        x = rng.normal(size=(4, 5))
        gout = rng.normal(size=(4, 3))
        out, cache = mlp_forward(net, x)
        param_grads, gin = mlp_backward(net, cache, gout)

        def objective():
            y, _ = mlp_forward(net, x)
            return float(np.sum(y * gout))

        h = 1e-4
        for li, layer in enumerate(net.layers):
            for arr, grad in ((layer.w, param_grads[li][0]), (layer.b, param_grads[li][1])):
                flat = arr.reshape(-1)
                gf = grad.reshape(-1)
                for i in rng.choice(flat.size, size=min(8, flat.size), replace=False):
                    orig = flat[i]
                    flat[i] = orig + h
                    up = objective()
                    flat[i] = orig - h
                    dn = objective()
                    flat[i] = orig
                    fd = (up - dn) / (2 * h)
                    if abs(fd) < 1e-8 and abs(gf[i]) < 1e-8:
                        continue
                    assert abs(fd - gf[i]) / max(abs(fd), abs(gf[i])) < 1e-4

    def test_glorot_bounds(self):
        rng = np.random.default_rng(9)
        w = glorot_uniform(rng, 30, 50)
        assert np.max(np.abs(w)) <= np.sqrt(6.0 / 80)

    def test_forward_is_pure(self):
        rng = np.random.default_rng(11)
        net = make_mlp(rng, 3, 8, 2, 2)
        x = rng.normal(size=(6, 3))
        a, _ = mlp_forward(net, x)
        b, _ = mlp_forward(net, x)
        assert np.array_equal(a, b)


class TestAdam:
    def _state(self, params):
        return AdamState(groups={k: "nets" for k in params})

    def test_first_step_is_signed_lr(self):
        for g0 in (0.3, -2.0, 1e-3):
            params = {"w": np.array([1.0])}
            state = self._state(params)
            adam_step(state, params, {"w": np.array([g0])}, {"nets": 0.001})
            delta = params["w"][0] - 1.0
            assert abs(delta + 0.001 * g0 / (abs(g0) + 1e-8)) < 1e-9

    def test_zero_gradient_leaves_params(self):
        params = {"w": np.arange(3.0)}
        state = self._state(params)
        for _ in range(5):
            adam_step(state, params, {"w": np.zeros(3)}, {"nets": 0.1})
        assert np.array_equal(params["w"], np.arange(3.0))

    def test_quadratic_descent_monotone_after_warmup(self):
        # scalar simulation of f(w) = w^2 from w = 1
        params = {"w": np.array([1.0])}
        state = self._state(params)
        trace = []
        for _ in range(100):
            adam_step(state, params, {"w": 2 * params["w"]}, {"nets": 0.01})
            trace.append(abs(params["w"][0]))
        assert all(b < a for a, b in zip(trace[3:], trace[4:]))

    def test_nan_gradient_names_group(self):
        params = {"k0": np.zeros(2)}
        state = AdamState(groups={"k0": "grids"})
        with pytest.raises(FloatingPointError, match="grids"):
            adam_step(state, params, {"k0": np.array([np.nan, 0.0])}, {"grids": 0.01})


class TestSchedule:
    @pytest.mark.parametrize("base,epoch,expected", [
        (0.001, 0, 0.001),
        (0.001, 1333, 0.0001),
        (0.01, 3999, 0.0001),
    ])
    def test_decay_steps(self, base, epoch, expected):
        assert lr_schedule(base, epoch) == pytest.approx(expected, rel=1e-12)
