"""sRGB transfer: endpoints, knee continuity, monotonicity, inversion."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from envsdf.color import srgb_decode, srgb_encode
from envsdf.tensor import Tensor, srgb_encode_op


def test_endpoints():
    np.testing.assert_allclose(srgb_encode(np.array(0.0)), 0.0, atol=1e-15)
    np.testing.assert_allclose(srgb_encode(np.array(1.0)), 1.0, atol=1e-12)


def test_knee_value_and_branch_agreement():
    knee = 0.0031308
    linear_branch = 12.92 * knee
    power_branch = 1.055 * knee ** (1.0 / 2.4) - 0.055
    np.testing.assert_allclose(linear_branch, 0.040449936, atol=1e-8)
    np.testing.assert_allclose(power_branch, linear_branch, atol=2e-5)
    np.testing.assert_allclose(srgb_encode(np.array(knee)), 0.040449936, atol=1e-8)


def test_mid_gray():
    np.testing.assert_allclose(srgb_encode(np.array(0.5)), 0.735357, atol=1e-6)


def test_values_above_one_clamp():
    np.testing.assert_allclose(srgb_encode(np.array([2.5, 10.0])), 1.0)


def test_rejects_negative_or_nonfinite():
    with pytest.raises(ValueError):
        srgb_encode(np.array(-0.1))
    with pytest.raises(ValueError):
        srgb_encode(np.array(np.nan))


def test_strictly_monotone_on_unit_interval():
    x = np.linspace(0.0, 1.0, 5001)
    y = srgb_encode(x)
    assert np.all(np.diff(y) > 0)


@settings(deadline=None, max_examples=80)
@given(st.floats(0.0, 1.0))
def test_roundtrip_identity(x):
    np.testing.assert_allclose(srgb_decode(srgb_encode(np.array(x))), x, atol=1e-6)


def test_op_matches_numpy_path():
    rng = np.random.default_rng(0)
    x = rng.uniform(0.0, 1.4, size=(50, 3))
    np.testing.assert_allclose(srgb_encode_op(Tensor(x)).data,
                               srgb_encode(x), atol=1e-12)
