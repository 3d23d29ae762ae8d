"""Metallic-workflow BRDF: Lambertian diffuse + GGX microfacet specular.

Conventions: all directions are unit vectors pointing away from the surface
point; ``alpha`` is perceptual roughness and the GGX width is alpha_ggx =
alpha^2 (clamped away from zero for numerical stability). Fresnel uses the
Schlick approximation with F0 = 0.04 (1 - m) + base_color * m. The diffuse
lobe is weighted by (1 - F)(1 - m) so the two lobes together stay within
the single-scattering energy budget.

Material parameters may be scalars (one material for the whole batch) or
per-point arrays; every function broadcasts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import normalize

__all__ = [
    "Material",
    "f0_from_material",
    "fresnel_schlick",
    "ggx_d",
    "smith_g2",
    "ggx_eval",
    "brdf_eval",
    "build_onb",
    "sample_cosine_hemisphere",
    "sample_ggx_half_vectors",
    "ALPHA_GGX_MIN",
]

ALPHA_GGX_MIN = 1e-7


@dataclass(frozen=True)
class Material:
    """Perceptual roughness, metallic factor, and linear base color."""

    alpha: float
    metallic: float
    base_color: tuple[float, float, float]

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0,1], got {self.alpha}")
        if not 0.0 <= self.metallic <= 1.0:
            raise ValueError(f"metallic must be in [0,1], got {self.metallic}")
        if any(not 0.0 <= c <= 1.0 for c in self.base_color):
            raise ValueError(f"base_color must be in [0,1]^3, got {self.base_color}")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.metallic, *self.base_color], dtype=np.float64)

    @property
    def alpha_ggx(self) -> float:
        return max(self.alpha * self.alpha, ALPHA_GGX_MIN)


def f0_from_material(metallic, base_color) -> np.ndarray:
    """F0 = 0.04 (1 - m) + c_b m; metallic (...,) and base_color (..., 3)."""
    m = np.asarray(metallic, dtype=np.float64)[..., None]
    cb = np.asarray(base_color, dtype=np.float64)
    return 0.04 * (1.0 - m) + cb * m


def fresnel_schlick(cos_theta, f0) -> np.ndarray:
    """F0 + (1 - F0)(1 - cos)^5 per channel.

    ``cos_theta`` has shape (...,); ``f0`` must broadcast against
    ``cos_theta[..., None]`` (e.g. (3,), (N, 3), or (N, 1, 3)).
    """
    c = np.clip(np.asarray(cos_theta, dtype=np.float64), 0.0, 1.0)[..., None]
    f0 = np.asarray(f0, dtype=np.float64)
    return f0 + (1.0 - f0) * (1.0 - c) ** 5


def ggx_d(n_dot_h, alpha_ggx) -> np.ndarray:
    """GGX normal distribution (isotropic); integrates to 1 against (n.h)."""
    c = np.clip(np.asarray(n_dot_h, dtype=np.float64), 0.0, 1.0)
    a2 = np.asarray(alpha_ggx, dtype=np.float64) ** 2
    denom = c * c * (a2 - 1.0) + 1.0
    return a2 / np.maximum(np.pi * denom * denom, 1e-20)


def smith_g2(n_dot_v, n_dot_l, alpha_ggx) -> np.ndarray:
    """Height-correlated Smith masking-shadowing for GGX."""
    a2 = np.asarray(alpha_ggx, dtype=np.float64) ** 2
    nv = np.clip(np.asarray(n_dot_v, dtype=np.float64), 1e-6, 1.0)
    nl = np.clip(np.asarray(n_dot_l, dtype=np.float64), 1e-6, 1.0)
    lam_v = nl * np.sqrt(nv * nv * (1.0 - a2) + a2)
    lam_l = nv * np.sqrt(nl * nl * (1.0 - a2) + a2)
    return 2.0 * nv * nl / np.maximum(lam_v + lam_l, 1e-20)


def ggx_eval(n: np.ndarray, v: np.ndarray, l: np.ndarray, mat: Material) -> np.ndarray:
    """Specular BRDF value (N, 3): D * F * G2 / (4 (n.v)(n.l)); zero below
    the horizon (n.l <= 0 or n.v <= 0)."""
    n = np.asarray(n, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    n_dot_v = np.sum(n * v, axis=-1)
    n_dot_l = np.sum(n * l, axis=-1)
    h = normalize(v + l, eps=1e-12)
    n_dot_h = np.sum(n * h, axis=-1)
    v_dot_h = np.sum(v * h, axis=-1)
    d = ggx_d(n_dot_h, mat.alpha_ggx)
    g = smith_g2(n_dot_v, n_dot_l, mat.alpha_ggx)
    f = fresnel_schlick(v_dot_h, f0_from_material(mat.metallic, mat.base_color))
    denom = 4.0 * np.clip(n_dot_v, 1e-6, None) * np.clip(n_dot_l, 1e-6, None)
    spec = (d * g / denom)[..., None] * f
    visible = (n_dot_l > 0.0) & (n_dot_v > 0.0)
    return np.where(visible[..., None], spec, 0.0)


def brdf_eval(n: np.ndarray, v: np.ndarray, l: np.ndarray, mat: Material) -> np.ndarray:
    """Full BRDF (diffuse + specular), shape (N, 3)."""
    cb = np.asarray(mat.base_color, dtype=np.float64)
    n_dot_v = np.sum(n * v, axis=-1)
    f_view = fresnel_schlick(n_dot_v, f0_from_material(mat.metallic, mat.base_color))
    kd = (1.0 - f_view) * (1.0 - mat.metallic)
    diffuse = kd * cb / np.pi
    n_dot_l = np.sum(n * l, axis=-1)
    diffuse = np.where((n_dot_l > 0)[..., None], diffuse, 0.0)
    return diffuse + ggx_eval(n, v, l, mat)


def build_onb(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal tangent/bitangent for unit normals (N, 3) (branchless)."""
    n = np.asarray(n, dtype=np.float64)
    sign = np.where(n[..., 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t = np.stack([1.0 + sign * n[..., 0] ** 2 * a, sign * b, -sign * n[..., 0]], axis=-1)
    bt = np.stack([b, sign + n[..., 1] ** 2 * a, -n[..., 1]], axis=-1)
    return t, bt


def sample_cosine_hemisphere(rng: np.random.Generator, n: np.ndarray,
                             count: int) -> np.ndarray:
    """Cosine-weighted directions about each normal; returns (N, count, 3)."""
    n = np.asarray(n, dtype=np.float64)
    t, bt = build_onb(n)
    u1 = rng.uniform(size=(n.shape[0], count))
    u2 = rng.uniform(size=(n.shape[0], count))
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    z = np.sqrt(np.maximum(1.0 - u1, 0.0))
    return (x[..., None] * t[:, None, :]
            + y[..., None] * bt[:, None, :]
            + z[..., None] * n[:, None, :])


def sample_ggx_half_vectors(rng: np.random.Generator, n: np.ndarray,
                            alpha_ggx, count: int) -> np.ndarray:
    """Half vectors drawn from the pdf D(h) (n.h); returns (N, count, 3).

    ``alpha_ggx`` may be scalar or per-point (N,).
    """
    n = np.asarray(n, dtype=np.float64)
    t, bt = build_onb(n)
    u1 = rng.uniform(size=(n.shape[0], count))
    u2 = rng.uniform(size=(n.shape[0], count))
    a2 = (np.asarray(alpha_ggx, dtype=np.float64) ** 2)
    if a2.ndim == 1:
        a2 = a2[:, None]
    cos2 = (1.0 - u1) / (1.0 + (a2 - 1.0) * u1)
    cos_t = np.sqrt(np.clip(cos2, 0.0, 1.0))
    sin_t = np.sqrt(np.clip(1.0 - cos2, 0.0, 1.0))
    phi = 2.0 * np.pi * u2
    x = sin_t * np.cos(phi)
    y = sin_t * np.sin(phi)
    return (x[..., None] * t[:, None, :]
            + y[..., None] * bt[:, None, :]
            + cos_t[..., None] * n[:, None, :])
