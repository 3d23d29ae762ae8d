"""Geometric primitives: unit vectors, reflection, cameras and rays.

Camera convention matches the synthetic-scenes JSON format: a 4x4
camera-to-world matrix whose rotation columns are (right, up, backward),
i.e. the camera looks down its local -z axis; ``fov_x`` is the full
horizontal field of view in radians. Pixel rays are cast through pixel
centers ((i + 0.5, j + 0.5) in image coordinates, row-major, top-left
origin).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "normalize",
    "reflect",
    "reflect_t",
    "Camera",
    "look_at",
    "camera_rays",
    "pixel_rays",
    "ray_sphere_intersect",
]


def normalize(v: np.ndarray, eps: float = 0.0) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if eps:
        n = np.maximum(n, eps)
    return v / n


def reflect(outgoing: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Mirror ``outgoing`` about ``normal``: 2 (o.n) n - o (both unit)."""
    d = np.sum(outgoing * normal, axis=-1, keepdims=True)
    return 2.0 * d * normal - outgoing


def reflect_t(outgoing: Tensor, normal: Tensor) -> Tensor:
    d = T.tsum(outgoing * normal, axis=-1, keepdims=True)
    return normal * (2.0 * d) - outgoing


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: camera-to-world pose + horizontal FOV + sensor size."""

    c2w: np.ndarray  # (4, 4)
    fov_x: float     # radians
    width: int
    height: int

    def __post_init__(self):
        c2w = np.asarray(self.c2w, dtype=np.float64)
        if c2w.shape != (4, 4):
            raise ValueError(f"c2w must be 4x4, got {c2w.shape}")
        rot = c2w[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-5):
            raise ValueError("camera rotation block is not orthonormal (tol 1e-5)")
        object.__setattr__(self, "c2w", c2w)

    @property
    def origin(self) -> np.ndarray:
        return self.c2w[:3, 3]

    @property
    def focal(self) -> float:
        """Focal length in pixels (from the horizontal FOV)."""
        return 0.5 * self.width / np.tan(0.5 * self.fov_x)


def look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world matrix for a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    backward = normalize(eye - np.asarray(target, dtype=np.float64))
    up = np.asarray(up, dtype=np.float64)
    if abs(np.dot(backward, normalize(up))) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = normalize(np.cross(up, backward))
    true_up = np.cross(backward, right)
    c2w = np.eye(4)
    c2w[:3, 0] = right
    c2w[:3, 1] = true_up
    c2w[:3, 2] = backward
    c2w[:3, 3] = eye
    return c2w


def pixel_rays(cam: Camera, px: np.ndarray, py: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rays through pixel centers (px, py) given as integer pixel indices.

    Returns (origins (N,3), unit directions (N,3)).
    """
    f = cam.focal
    x = (np.asarray(px, dtype=np.float64) + 0.5 - 0.5 * cam.width) / f
    y = -(np.asarray(py, dtype=np.float64) + 0.5 - 0.5 * cam.height) / f
    dirs_cam = np.stack([x, y, -np.ones_like(x)], axis=-1)
    dirs = dirs_cam @ cam.c2w[:3, :3].T
    dirs = normalize(dirs)
    origins = np.broadcast_to(cam.origin, dirs.shape).copy()
    return origins, dirs


def camera_rays(cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Rays for the full pixel grid, row-major: shape (H*W, 3) each."""
    py, px = np.mgrid[0:cam.height, 0:cam.width]
    return pixel_rays(cam, px.reshape(-1), py.reshape(-1))


def ray_sphere_intersect(origins: np.ndarray, dirs: np.ndarray,
                         center: np.ndarray, radius: float
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First-hit parameters of rays against a sphere.

    Returns (hit mask, t_near, t_far); t values are valid only where hit.
    Rays starting inside report t_near = max(t_enter, 0).
    """
    oc = origins - np.asarray(center, dtype=np.float64)
    b = np.sum(oc * dirs, axis=-1)
    c = np.sum(oc * oc, axis=-1) - radius * radius
    disc = b * b - c
    hit = disc >= 0.0
    root = np.sqrt(np.maximum(disc, 0.0))
    t0 = -b - root
    t1 = -b + root
    hit = hit & (t1 > 0.0)
    t_near = np.where(hit, np.maximum(t0, 0.0), np.inf)
    t_far = np.where(hit, t1, -np.inf)
    return hit, t_near, t_far
