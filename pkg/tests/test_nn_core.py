import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bigantax.errors import DomainError, ShapeError, StateError
from bigantax.nn_core import (PROB_EPS, Activation, AdamState, DenseLayer, Network, adam_step,
                              bce_terms)

from fdcheck import REL_TOL, numeric_grads, worst_relative_error


def _two_layer():
    return Network([
        DenseLayer([[1.0, 2.0], [3.0, -1.0]], [0.5, -1.0], Activation.LEAKY_RELU, 0.2),
        DenseLayer([[1.0, -1.0]], [0.25], Activation.IDENTITY),
    ])


class TestForward:
    def test_identity_layer(self):
        net = Network([DenseLayer(np.eye(3), np.zeros(3))])
        np.testing.assert_array_equal(net.forward([[1.0, 2.0, 3.0]]), [[1.0, 2.0, 3.0]])

    def test_zero_sigmoid_is_half(self):
        net = Network([DenseLayer(np.zeros((4, 3)), np.zeros(4), Activation.SIGMOID)])
        out = net.forward(np.random.default_rng(0).normal(size=(5, 3)) * 100)
        np.testing.assert_array_equal(out, np.full((5, 4), 0.5))

    def test_two_layer_hand_evaluated(self):
        # (1,0): hidden pre-act (1.5, 2.0) -> leaky -> (1.5, 2.0); out 1.5 - 2.0 + 0.25
        # (0,1): hidden pre-act (2.5, -2.0) -> leaky -> (2.5, -0.4); out 2.5 + 0.4 + 0.25
        out = _two_layer().forward([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(out, [[-0.25], [3.15]], atol=1e-15)

    def test_shape_error_names_layer(self):
        net = _two_layer()
        with pytest.raises(ShapeError, match="layer 0"):
            net.forward(np.ones((2, 3)))

    def test_mismatched_stack_rejected(self):
        with pytest.raises(ShapeError):
            Network([DenseLayer(np.ones((3, 2)), np.zeros(3)),
                     DenseLayer(np.ones((1, 2)), np.zeros(1))])

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        net = Network.build([5, 7, 3], "leaky_relu", "tanh", rng)
        x = rng.normal(size=(10, 5))
        assert np.array_equal(net.forward(x), net.forward(x))

    def test_sigmoid_open_interval_and_finite_at_extremes(self):
        layer = DenseLayer([[1.0]], [0.0], Activation.SIGMOID)
        y = layer.forward(np.array([[-700.0], [-30.0], [0.0], [30.0], [700.0]]))
        assert np.all(np.isfinite(y))
        assert np.all(y[1:4] > 0) and np.all(y[1:4] < 1)

    def test_leaky_slope_must_be_in_unit_interval(self):
        with pytest.raises(DomainError):
            DenseLayer([[1.0]], [0.0], Activation.LEAKY_RELU, slope=1.5)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=20))
def test_leaky_relu_monotone(xs):
    layer = DenseLayer([[1.0]], [0.0], Activation.LEAKY_RELU, 0.2)
    x = np.sort(np.array(xs))[:, None]
    y = layer.forward(x)[:, 0]
    assert np.all(np.diff(y) >= 0)


class TestBackward:
    def test_linear_scalar(self):
        layer = DenseLayer([[2.0]], [0.0])
        net = Network([layer])
        net.forward([[3.0]])
        net.backward([[1.0]])
        assert layer.grad_weights[0, 0] == 3.0
        assert layer.grad_bias[0] == 1.0

    def test_backward_without_forward(self):
        with pytest.raises(StateError):
            _two_layer().backward([[1.0]])

    def test_backward_consumes_forward(self):
        net = _two_layer()
        net.forward([[1.0, 0.0]])
        net.backward([[1.0]])
        with pytest.raises(StateError):
            net.backward([[1.0]])

    def test_zero_output_gradient(self):
        rng = np.random.default_rng(1)
        net = Network.build([4, 6, 2], "tanh", "sigmoid", rng)
        net.forward(rng.normal(size=(3, 4)))
        gin = net.backward(np.zeros((3, 2)))
        assert all(not g.any() for g in net.gradients())
        assert not gin.any()

    @pytest.mark.parametrize("act", list(Activation))
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, act, seed):
        rng = np.random.default_rng(seed)
        net = Network.build([3, 4, 2], act, act, rng)  # 26 parameters
        for p in net.parameters():
            p[...] = rng.normal(0, 0.8, p.shape)
        x = rng.normal(size=(5, 3))
        w = rng.normal(size=(5, 2))

        def loss():
            return float(np.sum(net.forward(x) * w))

        net.forward(x)
        net.backward(w)
        analytic = [g.copy() for g in net.gradients()]
        assert net.n_parameters() <= 50
        assert worst_relative_error(analytic, numeric_grads(loss, net.parameters())) < REL_TOL

    def test_input_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        net = Network.build([3, 5, 2], "leaky_relu", "sigmoid", rng)
        x = rng.normal(size=(4, 3))
        w = rng.normal(size=(4, 2))
        net.forward(x)
        gin = net.backward(w)
        num = numeric_grads(lambda: float(np.sum(net.forward(x) * w)), [x])[0]
        assert worst_relative_error([gin], [num]) < REL_TOL

    def test_buffers_overwritten_not_accumulated(self):
        rng = np.random.default_rng(2)
        net = Network.build([2, 2], "identity", "identity", rng)
        x = np.ones((1, 2))
        for _ in range(3):
            net.forward(x)
            net.backward(np.ones((1, 2)))
        np.testing.assert_array_equal(net.layers[0].grad_weights, np.ones((2, 2)))


def adam_oracle(p, g, steps, lr, b1=0.5, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(p)
    return out


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        p = [np.array([0.0])]
        state = AdamState.for_params(p, lr=0.001)
        adam_step(p, [np.array([2.0])], state)
        assert p[0][0] == pytest.approx(-0.001, rel=1e-7)
        assert state.t == 1

    def test_zero_gradient_is_identity(self):
        rng = np.random.default_rng(0)
        p = [rng.normal(size=(3, 2)), rng.normal(size=2)]
        before = [a.copy() for a in p]
        state = AdamState.for_params(p)
        adam_step(p, [np.zeros((3, 2)), np.zeros(2)], state)
        for a, b in zip(p, before):
            np.testing.assert_array_equal(a, b)

    def test_two_steps_match_scripted_recurrence(self):
        p = [np.array([0.0])]
        state = AdamState.for_params(p, lr=0.1)
        got = []
        for _ in range(2):
            adam_step(p, [np.array([1.0])], state)
            got.append(p[0][0])
        expected = adam_oracle(0.0, 1.0, 2, 0.1)
        # bias correction makes both steps exactly lr / (1 + eps)
        assert expected == pytest.approx([-0.1 / (1 + 1e-8), -0.2 / (1 + 1e-8)], abs=1e-15)
        assert got == pytest.approx(expected, abs=1e-15)
        assert state.t == 2

    def test_shape_mismatch(self):
        p = [np.zeros(2)]
        state = AdamState.for_params(p)
        with pytest.raises(ShapeError):
            adam_step(p, [np.zeros(3)], state)

    @settings(max_examples=30)
    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=8))
    def test_second_moment_nonnegative_and_step_counter(self, grads):
        p = [np.zeros(len(grads))]
        state = AdamState.for_params(p)
        for k in range(3):
            adam_step(p, [np.array(grads)], state)
            assert state.t == k + 1
            assert np.all(state.v[0] >= 0)

    def test_state_roundtrips_through_json(self):
        p = [np.zeros((2, 2))]
        state = AdamState.for_params(p)
        adam_step(p, [np.ones((2, 2))], state)
        back = AdamState.from_dict(json.loads(json.dumps(state.to_dict())))
        assert back.t == 1
        np.testing.assert_array_equal(back.m[0], state.m[0])


class TestBce:
    def test_half(self):
        lp, l1p = bce_terms(0.5)
        assert lp == pytest.approx(-0.6931471805599453, abs=1e-12)
        assert l1p == pytest.approx(-0.6931471805599453, abs=1e-12)

    def test_clamp_at_one(self):
        _, l1p = bce_terms(1.0)
        assert np.isfinite(l1p)
        assert l1p == pytest.approx(math.log(PROB_EPS), rel=1e-6)

    def test_point_nine(self):
        lp, l1p = bce_terms(0.9)
        assert lp == pytest.approx(-0.105361, abs=1e-6)
        assert l1p == pytest.approx(-2.302585, abs=1e-6)

    @pytest.mark.parametrize("bad", [-0.1, 1.01, float("nan")])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            bce_terms([0.5, bad])

    def test_tolerance_band(self):
        lp, _ = bce_terms(-5e-10)
        assert np.isfinite(lp)


def test_network_roundtrip_through_dict():
    rng = np.random.default_rng(4)
    net = Network.build([3, 4, 1], "leaky_relu", "sigmoid", rng, name="d")
    back = Network.from_dict(json.loads(json.dumps(net.to_dict())))
    x = rng.normal(size=(6, 3))
    assert np.array_equal(net.forward(x), back.forward(x))
