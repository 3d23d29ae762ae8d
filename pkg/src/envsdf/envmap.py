"""Equirectangular HDR environment maps.

Layout: rows sweep inclination theta in [0, pi] top to bottom, columns
sweep azimuth phi in [-pi, pi] left to right; texels hold linear radiance
as 32-bit floats. A direction maps to (theta, phi) via theta = acos(d.z),
phi = atan2(d.y, d.x). Sampling is bilinear with azimuthal wraparound and
row clamping at the poles.
"""

from __future__ import annotations

import os

import numpy as np

from .geom import normalize

__all__ = ["EnvironmentMap", "equirect_lookup", "make_probe", "load_probe"]


class EnvironmentMap:
    """A linear-radiance lat-long image plus sampling helpers."""

    def __init__(self, data: np.ndarray, name: str = "probe"):
        data = np.asarray(data, dtype=np.float32)
        if data.ndim != 3 or data.shape[2] != 3 or data.shape[0] < 1 or data.shape[1] < 2:
            raise ValueError(f"environment map must be (H, W>=2, 3), got {data.shape}")
        if data.size == 0:
            raise ValueError("environment map is empty")
        if not np.all(np.isfinite(data)) or np.any(data < 0):
            raise ValueError("environment map must be finite, nonnegative linear radiance")
        self.data = data
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    def sample(self, dirs: np.ndarray) -> np.ndarray:
        return equirect_lookup(self, dirs)

    def directions(self) -> np.ndarray:
        """Unit direction of every texel center, shape (H, W, 3)."""
        h, w = self.shape
        theta = (np.arange(h) + 0.5) / h * np.pi
        phi = (np.arange(w) + 0.5) / w * 2.0 * np.pi - np.pi
        st = np.sin(theta)[:, None]
        d = np.stack([
            st * np.cos(phi)[None, :],
            st * np.sin(phi)[None, :],
            np.broadcast_to(np.cos(theta)[:, None], (h, w)),
        ], axis=-1)
        return d

    def solid_angles(self) -> np.ndarray:
        """Solid angle of each texel row (H,), sums to 4pi over the map."""
        h, w = self.shape
        theta_edges = np.arange(h + 1) / h * np.pi
        band = 2.0 * np.pi * (np.cos(theta_edges[:-1]) - np.cos(theta_edges[1:]))
        return band / w

    def mean_radiance(self) -> np.ndarray:
        """Solid-angle-weighted mean radiance per channel."""
        w = self.solid_angles()[:, None]
        total = (self.data * w[:, :, None]).sum(axis=(0, 1))
        return total / (4.0 * np.pi)

    def save(self, path: str) -> None:
        if not path.endswith(".npy"):
            raise ValueError("environment maps are stored as .npy float32 arrays")
        np.save(path, self.data)


def equirect_lookup(env: EnvironmentMap, dirs: np.ndarray) -> np.ndarray:
    """Bilinear lat-long sample; returns linear radiance, shape (..., 3)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    d = normalize(dirs, eps=1e-12)
    h, w = env.shape
    theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
    phi = np.arctan2(d[..., 1], d[..., 0])
    r = theta / np.pi * h - 0.5
    c = (phi + np.pi) / (2.0 * np.pi) * w - 0.5
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    fr = r - r0
    fc = c - c0
    r0c = np.clip(r0, 0, h - 1)
    r1c = np.clip(r0 + 1, 0, h - 1)
    c0w = np.mod(c0, w)
    c1w = np.mod(c0 + 1, w)
    img = env.data
    v00 = img[r0c, c0w]
    v01 = img[r0c, c1w]
    v10 = img[r1c, c0w]
    v11 = img[r1c, c1w]
    fr = fr[..., None]
    fc = fc[..., None]
    top = v00 * (1.0 - fc) + v01 * fc
    bot = v10 * (1.0 - fc) + v11 * fc
    return top * (1.0 - fr) + bot * fr


def make_probe(seed: int, height: int = 64, width: int = 128,
               n_blobs: int = 5, sun: bool = True, name: str | None = None) -> EnvironmentMap:
    """Procedural HDR light probe: sky gradient + colored vMF blobs + a sun.

    Deterministic in ``seed``; peak radiance stays below ~12 so tone-mapped
    renders are not wall-to-wall clipped.
    """
    rng = np.random.default_rng(seed)
    h, w = height, width
    theta = (np.arange(h) + 0.5) / h * np.pi
    phi = (np.arange(w) + 0.5) / w * 2.0 * np.pi - np.pi
    st = np.sin(theta)[:, None]
    dirs = np.stack([
        st * np.cos(phi)[None, :],
        st * np.sin(phi)[None, :],
        np.broadcast_to(np.cos(theta)[:, None], (h, w)),
    ], axis=-1)

    sky = rng.uniform(0.15, 0.45, size=3)
    ground = rng.uniform(0.02, 0.12, size=3)
    elev = dirs[..., 2:3] * 0.5 + 0.5
    img = elev * sky + (1.0 - elev) * ground

    for _ in range(n_blobs):
        center = normalize(rng.normal(size=3))
        kappa = rng.uniform(6.0, 60.0)
        amp = rng.uniform(0.4, 2.5)
        color = rng.uniform(0.2, 1.0, size=3)
        lobe = np.exp(kappa * (dirs @ center - 1.0))
        img = img + amp * lobe[..., None] * color

    if sun:
        center = normalize(np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.3, 1.0)]))
        kappa = rng.uniform(300.0, 900.0)
        amp = rng.uniform(5.0, 10.0)
        color = rng.uniform(0.7, 1.0, size=3)
        lobe = np.exp(kappa * (dirs @ center - 1.0))
        img = img + amp * lobe[..., None] * color

    return EnvironmentMap(img.astype(np.float32), name=name or f"probe{seed}")


def load_probe(path: str, name: str | None = None) -> EnvironmentMap:
    """Load an environment map (.npy float32; .hdr/.exr via OpenCV if present)."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".npy":
        data = np.load(path)
    elif ext in (".hdr", ".exr"):
        try:
            import cv2
        except ImportError as e:
            raise ValueError(f"loading {ext} probes requires opencv-python") from e
        bgr = cv2.imread(path, cv2.IMREAD_UNCHANGED)
        if bgr is None:
            raise ValueError(f"could not decode probe image: {path}")
        data = bgr[..., ::-1].astype(np.float32)
    else:
        raise ValueError(f"unsupported probe format: {path}")
    stem = os.path.splitext(os.path.basename(path))[0]
    return EnvironmentMap(data, name=name or stem)
