"""Network blocks of the decomposed neural renderer.

The renderer splits into: per-environment feature encoders (directional
encoding -> feature vector), two shared shading decoders (diffuse and
specular) that map fused features to linear rgb, and a geometry net per
stage (frequency-encoded, material-conditioned sphere net for
pre-training; hash-grid scene net afterwards). Feature vectors pass
through a configurable normalization stage before any decoder sees them.

Surface normals come from central finite differences of the SDF head: the
six perturbed evaluations are ordinary forward passes, so the photometric
loss trains geometry *through* the normals with a first-order engine, and
hash-grid fields (whose analytic spatial gradient is piecewise constant)
get smooth normals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .hashgrid import HashGridConfig, HashGridTable, hash_grid_encode
from .nn import Mlp, normalize_features
from .shmath import ide_encode_t, sh_dim
from .tensor import Tensor

__all__ = [
    "freq_encode",
    "EnvFeatureNet",
    "ShadingNets",
    "SphereGeometryNet",
    "SceneGeometryNet",
    "ReflectionColorEncoder",
    "fd_gradient",
    "FEATURE_DIM",
    "IDE_LMAX",
    "RHO_DIFFUSE",
]

FEATURE_DIM = 12
IDE_LMAX = 4
RHO_DIFFUSE = 0.64  # fixed smooth-lobe roughness for diffuse env queries


def freq_encode(pos: np.ndarray, octaves: int = 6) -> np.ndarray:
    """[x, sin(2^k x), cos(2^k x) for k < octaves]; plain numpy (positions
    are never differentiated analytically)."""
    pos = np.asarray(pos)
    parts = [pos]
    for k in range(octaves):
        w = float(2**k)
        parts.append(np.sin(w * pos))
        parts.append(np.cos(w * pos))
    return np.concatenate(parts, axis=-1)


class EnvFeatureNet:
    """Distant-light encoder: (direction, roughness) -> unit feature vector."""

    def __init__(self, rng: np.random.Generator, widths: tuple[int, ...] = (256, 256, 256, 256),
                 norm_mode: str = "l2", dtype=np.float32):
        self.norm_mode = norm_mode
        self.mlp = Mlp([sh_dim(IDE_LMAX), *widths, FEATURE_DIM], rng,
                       dtype=dtype, name="env")

    def __call__(self, dirs: Tensor, rho: Tensor) -> Tensor:
        enc = ide_encode_t(dirs, rho, IDE_LMAX)
        return normalize_features(self.mlp(enc), self.norm_mode)

    def named_parameters(self, prefix: str):
        return self.mlp.named_parameters(prefix)

    def parameters(self):
        return self.mlp.parameters()

    def set_trainable(self, flag: bool):
        self.mlp.set_trainable(flag)

    def param_hash(self) -> str:
        return self.mlp.param_hash()


class ShadingNets:
    """Shared feature-to-color decoders (diffuse 2x32, specular 3x64).

    Outputs are nonnegative linear rgb via a softplus head. The diffuse
    decoder never sees a view direction by construction; the specular one
    gets the view/normal cosine as its only view-dependent scalar.
    """

    def __init__(self, rng: np.random.Generator, dtype=np.float32):
        self.diffuse = Mlp([2 * FEATURE_DIM, 32, 32, 3], rng, dtype=dtype, name="diffuse")
        self.specular = Mlp([2 * FEATURE_DIM + 1, 64, 64, 64, 3], rng, dtype=dtype,
                            name="specular")

    def diffuse_color(self, f_geo: Tensor, f_env_d: Tensor) -> Tensor:
        return T.softplus(self.diffuse(T.concat([f_geo, f_env_d], axis=-1)))

    def specular_color(self, f_geo: Tensor, f_env_s: Tensor, cos_theta: Tensor) -> Tensor:
        x = T.concat([f_geo, f_env_s, cos_theta], axis=-1)
        return T.softplus(self.specular(x))

    def named_parameters(self):
        return (self.diffuse.named_parameters("diffuse")
                + self.specular.named_parameters("specular"))

    def parameters(self):
        return self.diffuse.parameters() + self.specular.parameters()

    def set_trainable(self, flag: bool):
        self.diffuse.set_trainable(flag)
        self.specular.set_trainable(flag)

    def param_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(self.diffuse.param_hash().encode())
        h.update(self.specular.param_hash().encode())
        return h.hexdigest()


@dataclass
class GeometryOutput:
    sdf: Tensor        # (N,)
    rho: Tensor        # (N, 1) in (0, 1)
    feat: Tensor       # (N, FEATURE_DIM), normalization already applied
    eta: Tensor | None  # (N, 1) in (0, 1); scene nets only


class SphereGeometryNet:
    """Material-conditioned canonical-sphere field: frequency-encoded
    position plus the raw material 5-tuple -> (SDF, roughness, feature)."""

    def __init__(self, rng: np.random.Generator, octaves: int = 6,
                 widths: tuple[int, ...] = (64, 64, 64),
                 norm_mode: str = "l2", dtype=np.float32):
        self.octaves = octaves
        self.norm_mode = norm_mode
        self.dtype = dtype
        in_dim = 3 * (1 + 2 * octaves) + 5
        self.mlp = Mlp([in_dim, *widths, 1 + 1 + FEATURE_DIM], rng, dtype=dtype,
                       name="sphere_geo")

    def _input(self, pos: np.ndarray, material: np.ndarray) -> Tensor:
        # Encode in storage precision: sin/cos on float32 is ~2x float64.
        enc = freq_encode(np.asarray(pos, dtype=self.dtype), self.octaves)
        x = np.concatenate([enc, np.asarray(material, dtype=self.dtype)], axis=-1)
        return Tensor(x)

    def query(self, pos: np.ndarray, material: np.ndarray,
              heads: bool = True) -> GeometryOutput | Tensor:
        """Full query, or SDF only when ``heads`` is False (normals path)."""
        raw = self.mlp(self._input(pos, material))
        sdf = T.reshape(raw[:, 0:1], (pos.shape[0],))
        if not heads:
            return sdf
        rho = T.sigmoid(raw[:, 1:2])
        feat = normalize_features(raw[:, 2:], self.norm_mode)
        return GeometryOutput(sdf=sdf, rho=rho, feat=feat, eta=None)

    def sdf_fn(self, material_row: np.ndarray):
        """Plain-numpy SDF closure at a fixed material (occupancy, probes)."""

        def fn(pos: np.ndarray) -> np.ndarray:
            mat = np.broadcast_to(material_row, (pos.shape[0], 5))
            return self.query(pos, mat, heads=False).data

        return fn

    def named_parameters(self, prefix: str = "sphere_geo"):
        return self.mlp.named_parameters(prefix)

    def parameters(self):
        return self.mlp.parameters()

    def set_trainable(self, flag: bool):
        self.mlp.set_trainable(flag)

    def param_hash(self) -> str:
        return self.mlp.param_hash()


class SceneGeometryNet:
    """Hash-grid scene field: position -> (SDF, roughness, feature, blend).

    The blend head starts biased strongly negative so indirect mixing is
    born near zero and only opens up if it pays off.
    """

    def __init__(self, rng: np.random.Generator, grid_config: HashGridConfig,
                 widths: tuple[int, ...] = (64, 64, 64),
                 norm_mode: str = "l2", dtype=np.float32,
                 eta_bias: float = -3.0):
        self.norm_mode = norm_mode
        self.dtype = dtype
        self.grid = HashGridTable(grid_config, rng, dtype=dtype)
        in_dim = grid_config.out_dim
        self.mlp = Mlp([in_dim, *widths, 1 + 1 + FEATURE_DIM + 1], rng, dtype=dtype,
                       name="scene_geo")
        self.mlp.biases[-1].data[1 + 1 + FEATURE_DIM] = eta_bias

    def query(self, pos: np.ndarray, heads: bool = True) -> GeometryOutput | Tensor:
        raw = self.mlp(hash_grid_encode(pos, self.grid))
        sdf = T.reshape(raw[:, 0:1], (pos.shape[0],))
        if not heads:
            return sdf
        rho = T.sigmoid(raw[:, 1:2])
        feat = normalize_features(raw[:, 2:2 + FEATURE_DIM], self.norm_mode)
        eta = T.sigmoid(raw[:, 2 + FEATURE_DIM:])
        return GeometryOutput(sdf=sdf, rho=rho, feat=feat, eta=eta)

    def sdf_np(self, pos: np.ndarray) -> np.ndarray:
        return self.query(pos, heads=False).data

    def named_parameters(self, prefix: str = "scene_geo"):
        return self.grid.named_parameters(prefix) + self.mlp.named_parameters(prefix)

    def parameters(self):
        return self.grid.parameters() + self.mlp.parameters()

    def set_trainable(self, flag: bool):
        self.grid.set_trainable(flag)
        self.mlp.set_trainable(flag)


class ReflectionColorEncoder:
    """Maps marched reflected radiance (+ roughness) into the same feature
    space the specular decoder consumes."""

    def __init__(self, rng: np.random.Generator, widths: tuple[int, ...] = (64, 64),
                 norm_mode: str = "l2", dtype=np.float32):
        self.norm_mode = norm_mode
        self.mlp = Mlp([4, *widths, FEATURE_DIM], rng, dtype=dtype, name="refl_encoder")

    def __call__(self, radiance: Tensor, rho: Tensor) -> Tensor:
        x = T.concat([radiance, rho], axis=-1)
        return normalize_features(self.mlp(x), self.norm_mode)

    def named_parameters(self, prefix: str = "refl_encoder"):
        return self.mlp.named_parameters(prefix)

    def parameters(self):
        return self.mlp.parameters()

    def set_trainable(self, flag: bool):
        self.mlp.set_trainable(flag)


def fd_gradient(sdf_eval, pos: np.ndarray, eps: float) -> Tensor:
    """Spatial SDF gradient by central differences, differentiable in the
    field's parameters.

    ``sdf_eval`` maps (N, 3) positions to an (N,) SDF Tensor; six perturbed
    forward passes are batched into one call.
    """
    n = pos.shape[0]
    offsets = np.concatenate([np.eye(3), -np.eye(3)]) * eps  # (6, 3)
    stacked = (pos[None, :, :] + offsets[:, None, :]).reshape(6 * n, 3)
    vals = sdf_eval(stacked)  # (6N,) Tensor
    comps = []
    for a in range(3):
        plus = vals[a * n:(a + 1) * n]
        minus = vals[(a + 3) * n:(a + 4) * n]
        comps.append(T.reshape((plus - minus) * (0.5 / eps), (n, 1)))
    return T.concat(comps, axis=-1)
