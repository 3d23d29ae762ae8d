"""Finite-difference validation of every autodiff primitive."""

import numpy as np
import pytest

from envsdf import tensor as T
from envsdf.nn import grad_check
from envsdf.tensor import Tensor


def _rng():
    return np.random.default_rng(7)


class TestPrimitiveGradients:
    """Each primitive's backward must match central differences to 1e-4."""

    def test_arithmetic_chain(self):
        rng = _rng()
        x0 = rng.normal(size=(4, 3)) + 3.0

        def f(x):
            y = (x * 2.0 + 1.5) / (x + 4.0) - T.square(x) * 0.1
            return T.tsum(y)

        assert grad_check(f, Tensor(x0)) < 1e-6

    def test_unary_ops(self):
        rng = _rng()
        x0 = rng.uniform(0.5, 2.0, size=(5, 2))
        cases = [
            lambda x: T.tsum(T.exp(x)),
            lambda x: T.tsum(T.log(x)),
            lambda x: T.tsum(T.sqrt(x)),
            lambda x: T.tsum(T.sin(x) * T.cos(x)),
            lambda x: T.tsum(T.sigmoid(x)),
            lambda x: T.tsum(T.softplus(x)),
            lambda x: T.tsum(T.square(x)),
        ]
        for f in cases:
            assert grad_check(f, Tensor(x0)) < 1e-5

    def test_relu_and_abs_away_from_kinks(self):
        rng = _rng()
        x0 = rng.normal(size=(6, 4))
        x0 = np.where(np.abs(x0) < 0.05, 0.2, x0)  # keep FD probes off the kink
        assert grad_check(lambda x: T.tsum(T.relu(x)), Tensor(x0)) < 1e-6
        assert grad_check(lambda x: T.tsum(T.absolute(x)), Tensor(x0)) < 1e-6

    def test_matmul_both_sides(self):
        rng = _rng()
        a0 = rng.normal(size=(3, 4))
        b0 = rng.normal(size=(4, 2))
        b_const = Tensor(b0)
        assert grad_check(lambda a: T.tsum(T.matmul(a, b_const)), Tensor(a0)) < 1e-6
        a_const = Tensor(a0)
        assert grad_check(lambda b: T.tsum(T.square(T.matmul(a_const, b))), Tensor(b0)) < 1e-5

    def test_broadcast_add_bias(self):
        rng = _rng()
        b0 = rng.normal(size=(4,))
        x = Tensor(rng.normal(size=(5, 4)))
        assert grad_check(lambda b: T.tsum(T.square(x + b)), Tensor(b0)) < 1e-5

    def test_reductions_and_shapes(self):
        rng = _rng()
        x0 = rng.normal(size=(3, 4))
        assert grad_check(lambda x: T.tmean(T.square(x), accum_f64=True), Tensor(x0)) < 1e-5
        assert grad_check(lambda x: T.tsum(T.tsum(x, axis=1) * 2.0), Tensor(x0)) < 1e-6
        assert grad_check(lambda x: T.tsum(T.square(T.reshape(x, (2, 6)))), Tensor(x0)) < 1e-5
        assert grad_check(lambda x: T.tsum(T.square(T.concat([x, x * 2.0], axis=1))), Tensor(x0)) < 1e-5
        assert grad_check(lambda x: T.tsum(T.square(x[:, 1:3])), Tensor(x0)) < 1e-5

    def test_cumsum_exclusive(self):
        x = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]]))
        with T.Tape() as tape:
            y = T.cumsum_exclusive(x, axis=1)
        np.testing.assert_allclose(y.data, [[0.0, 1.0, 3.0, 6.0]])
        rng = _rng()
        x0 = rng.normal(size=(3, 5))
        assert grad_check(
            lambda x: T.tsum(T.square(T.cumsum_exclusive(x, axis=1))), Tensor(x0)) < 1e-5

    def test_gather_scatter(self):
        rng = _rng()
        x0 = rng.normal(size=(6, 3))
        idx = np.array([0, 2, 2, 5, 1])
        assert grad_check(
            lambda x: T.tsum(T.square(T.gather_rows(x, idx))), Tensor(x0)) < 1e-5
        vals = rng.normal(size=(4, 2))
        put = np.array([5, 0, 3, 1])
        assert grad_check(
            lambda v: T.tsum(T.square(T.scatter_rows(v, put, 7))), Tensor(vals)) < 1e-5

    def test_min_max_clip_where(self):
        rng = _rng()
        x0 = rng.normal(size=(4, 4)) * 2.0
        x0 = np.where(np.abs(np.abs(x0) - 1.0) < 0.05, 0.5, x0)  # off clip edges
        y = Tensor(rng.normal(size=(4, 4)))
        mask = rng.uniform(size=(4, 4)) > 0.5
        assert grad_check(lambda x: T.tsum(T.maximum(x, y)), Tensor(x0)) < 1e-6
        assert grad_check(lambda x: T.tsum(T.minimum(x, y)), Tensor(x0)) < 1e-6
        assert grad_check(lambda x: T.tsum(T.clip(x, -1.0, 1.0) * 2.0), Tensor(x0)) < 1e-6
        assert grad_check(lambda x: T.tsum(T.where(mask, T.square(x), x * 3.0)), Tensor(x0)) < 1e-5

    def test_sdf_to_density_grads(self):
        rng = _rng()
        s0 = rng.normal(size=(40,)) * 0.5
        s0 = np.where(np.abs(s0) < 0.01, 0.05, s0)  # branch boundary is C1 but FD-noisy
        beta = Tensor(np.asarray(0.07), requires_grad=True)
        # The density scales like 1/beta^2, so FD needs a step well below beta.
        assert grad_check(
            lambda s: T.tsum(T.sdf_to_density_op(s, beta)), Tensor(s0), h=1e-4) < 1e-4
        s_const = Tensor(s0)
        assert grad_check(
            lambda b: T.tsum(T.sdf_to_density_op(s_const, b)),
            Tensor(np.asarray(0.07)), h=1e-5) < 1e-4

    def test_srgb_encode_grads_away_from_knee(self):
        rng = _rng()
        x0 = rng.uniform(0.1, 0.9, size=(20, 3))
        assert grad_check(lambda x: T.tsum(T.srgb_encode_op(x)), Tensor(x0),
                          h=1e-4) < 1e-5


class TestTapeMechanics:
    def test_no_tape_no_recording(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = x * 2.0
        assert y._backward is None and not y.requires_grad

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with T.Tape() as tape:
            y = x * 2.0
        with pytest.raises(ValueError):
            tape.backward(y)

    def test_grad_accumulates_over_reuse(self):
        x = Tensor(np.asarray(3.0), requires_grad=True)
        with T.Tape() as tape:
            y = x * x + x * 2.0  # x reused three times
            tape.backward(y)
        np.testing.assert_allclose(x.grad, 8.0)

    def test_detach_blocks_gradient(self):
        x = Tensor(np.asarray(2.0), requires_grad=True)
        with T.Tape() as tape:
            y = x.detach() * x
            tape.backward(y)
        np.testing.assert_allclose(x.grad, 2.0)  # only the live branch

    def test_loss_accumulation_is_float64(self):
        x = Tensor(np.ones(10, dtype=np.float32), requires_grad=True)
        s = T.tsum(x, accum_f64=True)
        assert s.data.dtype == np.float64
