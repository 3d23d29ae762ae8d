"""Image IO: 8-bit sRGB PNGs (optional alpha) and 32-bit float linear .npy."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .color import srgb_encode

__all__ = ["write_png", "read_png", "write_float_image", "read_float_image",
           "linear_to_png"]


def write_png(path: str, srgb: np.ndarray, alpha: np.ndarray | None = None) -> None:
    """Write an sRGB image in [0,1] (H,W,3) with optional alpha (H,W)."""
    arr = np.clip(np.asarray(srgb), 0.0, 1.0)
    u8 = np.round(arr * 255.0).astype(np.uint8)
    if alpha is not None:
        a8 = np.round(np.clip(alpha, 0.0, 1.0) * 255.0).astype(np.uint8)
        u8 = np.concatenate([u8, a8[..., None]], axis=-1)
        Image.fromarray(u8, mode="RGBA").save(path)
    else:
        Image.fromarray(u8, mode="RGB").save(path)


def read_png(path: str) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a PNG; returns (sRGB float (H,W,3) in [0,1], alpha (H,W) or None)."""
    img = Image.open(path)
    arr = np.asarray(img).astype(np.float64) / 255.0
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=-1)
    if arr.shape[-1] == 4:
        return arr[..., :3], arr[..., 3]
    return arr[..., :3], None


def write_float_image(path: str, linear: np.ndarray) -> None:
    if not path.endswith(".npy"):
        raise ValueError("float images are stored as .npy")
    np.save(path, np.asarray(linear, dtype=np.float32))


def read_float_image(path: str) -> np.ndarray:
    return np.load(path).astype(np.float64)


def linear_to_png(path: str, linear: np.ndarray, alpha: np.ndarray | None = None) -> None:
    """Tone-map linear radiance through the sRGB transfer and write a PNG."""
    write_png(path, srgb_encode(np.maximum(linear, 0.0)), alpha)
