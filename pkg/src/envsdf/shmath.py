"""Real spherical harmonics and the integrated directional encoding.

Basis ordering is (l, m) lexicographic: index = l^2 + l + m for
l = 0..l_max, m = -l..l. The Cartesian evaluation uses scaled associated
Legendre polynomials Q_l^m(z) = P_l^m(z) / sin^m(theta) (polynomials in z,
Condon-Shortley phase included) paired with Re/Im[(x+iy)^m], so there is no
pole singularity and the whole basis is polynomial in (x, y, z).

Two evaluation paths share the same recurrences: a plain numpy one for
oracle/rendering code and a tensor-graph one for differentiable encoders.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "sh_basis",
    "sh_basis_t",
    "ide_attenuation",
    "ide_encode",
    "ide_encode_t",
    "sh_dim",
]

_MAX_L = 8


def sh_dim(l_max: int) -> int:
    return (l_max + 1) ** 2


def _check_lmax(l_max: int) -> None:
    if not 0 <= l_max <= _MAX_L:
        raise ValueError(f"l_max must be in [0, {_MAX_L}], got {l_max}")


def _norm_const(l: int, m: int) -> float:
    """K_l^m = sqrt((2l+1)/(4pi) * (l-m)!/(l+m)!)."""
    return math.sqrt((2 * l + 1) / (4.0 * math.pi)
                     * math.factorial(l - m) / math.factorial(l + m))


def _check_unit(dirs: np.ndarray, tol: float = 1e-6) -> None:
    nrm2 = np.sum(dirs * dirs, axis=-1)
    if not np.all(np.abs(nrm2 - 1.0) <= 3.0 * tol):
        worst = float(np.abs(nrm2 - 1.0).max())
        raise ValueError(f"directions must be unit length (worst |d.d - 1| = {worst:.3e})")


def sh_basis(dirs: np.ndarray, l_max: int) -> np.ndarray:
    """Evaluate the real SH basis at unit directions.

    dirs: (..., 3) unit vectors. Returns (..., (l_max+1)^2).
    """
    _check_lmax(l_max)
    dirs = np.asarray(dirs, dtype=np.float64)
    _check_unit(dirs)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]

    out = np.zeros(dirs.shape[:-1] + (sh_dim(l_max),), dtype=np.float64)
    # Q_l^m table over z, built by the standard three-term recurrence.
    q = {}
    for m in range(l_max + 1):
        if m == 0:
            q[(0, 0)] = np.ones_like(z)
        else:
            q[(m, m)] = q[(m - 1, m - 1)] * (-(2 * m - 1))
        if m + 1 <= l_max:
            q[(m + 1, m)] = z * (2 * m + 1) * q[(m, m)]
        for l in range(m + 2, l_max + 1):
            q[(l, m)] = ((2 * l - 1) * z * q[(l - 1, m)]
                         - (l + m - 1) * q[(l - 2, m)]) / (l - m)
    # Azimuthal factors A_m = Re[(x+iy)^m], B_m = Im[(x+iy)^m].
    a_prev, b_prev = np.ones_like(x), np.zeros_like(x)
    a, b = {0: a_prev}, {0: b_prev}
    for m in range(1, l_max + 1):
        a[m] = x * a[m - 1] - y * b[m - 1]
        b[m] = x * b[m - 1] + y * a[m - 1]

    sqrt2 = math.sqrt(2.0)
    for l in range(l_max + 1):
        base = l * l + l
        out[..., base] = _norm_const(l, 0) * q[(l, 0)]
        for m in range(1, l + 1):
            k = sqrt2 * _norm_const(l, m)
            out[..., base + m] = k * q[(l, m)] * a[m]
            out[..., base - m] = k * q[(l, m)] * b[m]
    return out


def sh_basis_t(d: Tensor, l_max: int) -> Tensor:
    """Tensor-graph twin of :func:`sh_basis`; d is (N, 3), differentiable."""
    _check_lmax(l_max)
    x, y, z = d[:, 0:1], d[:, 1:2], d[:, 2:3]

    q: dict[tuple[int, int], Tensor | float] = {}
    ones = Tensor(np.ones_like(z.data))
    for m in range(l_max + 1):
        if m == 0:
            q[(0, 0)] = ones
        else:
            q[(m, m)] = q[(m - 1, m - 1)] * float(-(2 * m - 1))
        if m + 1 <= l_max:
            q[(m + 1, m)] = z * float(2 * m + 1) * q[(m, m)]
        for l in range(m + 2, l_max + 1):
            q[(l, m)] = (z * float(2 * l - 1) * q[(l - 1, m)]
                         - q[(l - 2, m)] * float(l + m - 1)) * (1.0 / (l - m))

    a: dict[int, Tensor] = {0: ones}
    b: dict[int, Tensor] = {0: ones * 0.0}
    for m in range(1, l_max + 1):
        a[m] = x * a[m - 1] - y * b[m - 1]
        b[m] = x * b[m - 1] + y * a[m - 1]

    sqrt2 = math.sqrt(2.0)
    cols: list[Tensor] = []
    for l in range(l_max + 1):
        row = [None] * (2 * l + 1)
        row[l] = q[(l, 0)] * _norm_const(l, 0)
        for m in range(1, l + 1):
            k = sqrt2 * _norm_const(l, m)
            row[l + m] = q[(l, m)] * a[m] * k
            row[l - m] = q[(l, m)] * b[m] * k
        cols.extend(row)
    return T.concat(cols, axis=-1)


def ide_attenuation(rho: np.ndarray, l_max: int) -> np.ndarray:
    """Per-degree attenuation A_l(rho) = exp(-l(l+1) rho / 2), tiled to the
    full basis layout."""
    rho = np.asarray(rho, dtype=np.float64)
    scales = np.concatenate([
        np.full(2 * l + 1, -0.5 * l * (l + 1)) for l in range(l_max + 1)
    ])
    return np.exp(rho[..., None] * scales)


def ide_encode(dirs: np.ndarray, rho: np.ndarray | float, l_max: int = 4) -> np.ndarray:
    """Roughness-attenuated directional encoding (numpy path).

    Smooth (large rho) kills high-degree bands; rho=0 returns the raw basis.
    """
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(~np.isfinite(rho)) or np.any(rho < 0):
        raise ValueError("roughness must be finite and >= 0")
    sh = sh_basis(dirs, l_max)
    return sh * ide_attenuation(np.broadcast_to(rho, sh.shape[:-1]), l_max)


def ide_encode_t(d: Tensor, rho: Tensor, l_max: int = 4) -> Tensor:
    """Tensor-graph twin of :func:`ide_encode`; d is (N,3), rho is (N,1)."""
    sh = sh_basis_t(d, l_max)
    scales = np.concatenate([
        np.full(2 * l + 1, -0.5 * l * (l + 1)) for l in range(l_max + 1)
    ]).astype(d.data.dtype)
    att = T.exp(T.matmul(rho, Tensor(scales[None, :])))
    return sh * att
