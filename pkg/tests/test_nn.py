"""MLP forward/backward, feature normalization, and Adam behavior."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from envsdf import tensor as T
from envsdf.nn import (AdamState, Mlp, NanGradientError, adam_step, grad_check,
                       instance_normalize, l2_normalize)
from envsdf.tensor import Tensor


def test_zero_weights_identity_activation_returns_bias():
    rng = np.random.default_rng(0)
    net = Mlp([3, 4], rng, out_act="identity", dtype=np.float64)
    net.weights[0].data[:] = 0.0
    net.biases[0].data[:] = np.array([1.0, -2.0, 0.5, 3.0])
    out = net(Tensor(rng.normal(size=(7, 3))))
    np.testing.assert_allclose(out.data, np.tile(net.biases[0].data, (7, 1)))


def test_single_identity_layer_passes_input_through():
    rng = np.random.default_rng(0)
    net = Mlp([4, 4], rng, out_act="identity", dtype=np.float64)
    net.weights[0].data[:] = np.eye(4)
    net.biases[0].data[:] = 0.0
    x = rng.normal(size=(5, 4))
    np.testing.assert_allclose(net(Tensor(x)).data, x)


def test_input_width_mismatch_rejected():
    net = Mlp([3, 2], np.random.default_rng(0))
    with pytest.raises(ValueError):
        net(Tensor(np.zeros((4, 5))))


def test_mlp_gradients_match_finite_differences():
    """Random 2x32 net: d(loss)/d(every weight) vs central differences."""
    rng = np.random.default_rng(3)
    net = Mlp([5, 32, 32, 2], rng, dtype=np.float64)
    x = Tensor(rng.normal(size=(6, 5)))

    for layer in range(len(net.weights)):
        w0 = net.weights[layer]

        def f(w, _layer=layer):
            saved = net.weights[_layer]
            net.weights[_layer] = w
            try:
                out = net(x)
                return T.tsum(T.square(out), accum_f64=True)
            finally:
                net.weights[_layer] = saved

        assert grad_check(f, w0) < 1e-4


def test_l2_normalize_values():
    v = Tensor(np.array([[3.0, 4.0]]))
    np.testing.assert_allclose(l2_normalize(v).data, [[0.6, 0.8]], atol=1e-12)
    unit = np.array([[0.0, 1.0, 0.0]])
    np.testing.assert_allclose(l2_normalize(Tensor(unit)).data, unit, atol=1e-12)
    zero = np.zeros((2, 5))
    np.testing.assert_allclose(l2_normalize(Tensor(zero)).data, zero)


@settings(deadline=None, max_examples=50)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=8))
def test_l2_normalize_norm_bound(vals):
    out = l2_normalize(Tensor(np.array([vals], dtype=np.float64))).data
    norm = np.linalg.norm(out)
    assert norm <= 1.0 + 1e-6
    if np.linalg.norm(vals) >= 1e-8:
        assert abs(norm - 1.0) <= 1e-6


def test_l2_normalize_gradient():
    rng = np.random.default_rng(5)
    v0 = rng.normal(size=(4, 6))
    assert grad_check(
        lambda v: T.tsum(T.square(l2_normalize(v) * 1.7)), Tensor(v0)) < 1e-5


def test_instance_normalize_moments():
    rng = np.random.default_rng(6)
    out = instance_normalize(Tensor(rng.normal(size=(10, 12)) * 3.0 + 1.0)).data
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.std(axis=1), 1.0, atol=1e-3)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        st_ = AdamState.for_params([p], lr=1e-3)
        adam_step([p], st_)
        np.testing.assert_allclose(p.data, [1.0, 2.0])

    def test_single_step_magnitude(self):
        p = Tensor(np.asarray(0.0), requires_grad=True)
        p.grad = np.asarray(1.0)
        st_ = AdamState.for_params([p], lr=1e-3)
        adam_step([p], st_)
        np.testing.assert_allclose(p.data, -1e-3, rtol=1e-6)

    def test_constant_gradient_descends(self):
        p = Tensor(np.asarray(5.0), requires_grad=True)
        st_ = AdamState.for_params([p], lr=1e-2)
        for _ in range(100):
            p.grad = np.asarray(2.0)
            adam_step([p], st_)
        assert p.data < 5.0

    def test_nan_gradient_aborts(self):
        p = Tensor(np.asarray(0.0), requires_grad=True)
        p.grad = np.asarray(np.nan)
        st_ = AdamState.for_params([p], lr=1e-3)
        with pytest.raises(NanGradientError):
            adam_step([p], st_)


def test_training_replay_is_bitwise_identical():
    """Same seed, same data, same op order => identical float32 parameters."""

    def run():
        rng = np.random.default_rng(42)
        net = Mlp([3, 16, 1], rng)
        params = net.parameters()
        state = AdamState.for_params(params, lr=1e-3)
        data_rng = np.random.default_rng(17)
        for _ in range(20):
            x = Tensor(data_rng.normal(size=(32, 3)).astype(np.float32))
            target = Tensor(data_rng.normal(size=(32, 1)).astype(np.float32))
            with T.Tape() as tape:
                loss = T.tmean(T.square(net(x) - target), accum_f64=True)
                tape.backward(loss)
            adam_step(params, state)
        return [p.data.copy() for p in params]

    a, b = run(), run()
    for pa, pb in zip(a, b):
        assert pa.tobytes() == pb.tobytes()


def test_composed_normalize_mlp_gradcheck():
    rng = np.random.default_rng(9)
    net = Mlp([6, 32, 3], rng, dtype=np.float64)
    x0 = rng.normal(size=(4, 6))
    assert grad_check(
        lambda x: T.tsum(T.square(net(l2_normalize(x))), accum_f64=True),
        Tensor(x0)) < 1e-4


def test_srgb_sum_gradcheck_away_from_knee():
    rng = np.random.default_rng(11)
    x0 = rng.uniform(0.1, 0.9, size=(10, 3))
    assert grad_check(lambda x: T.tsum(T.srgb_encode_op(x)), Tensor(x0),
                      h=1e-4) < 1e-5
