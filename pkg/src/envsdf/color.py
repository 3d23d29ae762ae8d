"""sRGB transfer functions (numpy path).

The differentiable twin used inside loss graphs is
:func:`envsdf.tensor.srgb_encode_op`; both implement the same piecewise
transfer: 12.92 x below the knee (0.0031308), else 1.055 x^(1/2.4) - 0.055,
with the encoded result clamped to [0, 1].
"""

from __future__ import annotations

import numpy as np

__all__ = ["srgb_encode", "srgb_decode"]

_KNEE = 0.0031308
_KNEE_ENC = 12.92 * _KNEE


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    """Linear radiance (>= 0) to display sRGB in [0, 1]."""
    x = np.asarray(linear, dtype=np.float64)
    if np.any(~np.isfinite(x)) or np.any(x < 0):
        raise ValueError("linear rgb must be finite and nonnegative")
    low = x <= _KNEE
    safe = np.where(low, 1.0, x)
    enc = np.where(low, 12.92 * x, 1.055 * safe ** (1.0 / 2.4) - 0.055)
    return np.minimum(enc, 1.0)


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    """Inverse transfer on [0, 1] (exact inverse of the unclamped branch)."""
    y = np.asarray(encoded, dtype=np.float64)
    low = y <= _KNEE_ENC
    safe = np.where(low, 1.0, y)
    return np.where(low, y / 12.92, ((safe + 0.055) / 1.055) ** 2.4)
