"""Named-tensor checkpoints: a JSON manifest plus one little-endian
float32 blob.

Layout on disk (``path`` is a directory)::

    path/manifest.json   {"format": 1, "meta": {...}, "tensors": [
                            {"name": ..., "shape": [...], "dtype": "float32",
                             "offset": <byte offset into tensors.bin>}, ...]}
    path/tensors.bin     concatenated raw little-endian values

Tensors are written in sorted-name order so that identical contents always
produce byte-identical files. Round-trips are bit exact.
"""

from __future__ import annotations

import json
import os

import numpy as np

__all__ = ["save_checkpoint", "load_checkpoint", "checkpoint_bytes_equal"]

_MANIFEST = "manifest.json"
_BLOB = "tensors.bin"


def save_checkpoint(path: str, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    entries = []
    offset = 0
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "float32",
            "offset": offset,
        })
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {"format": 1, "meta": meta or {}, "tensors": entries}
    with open(os.path.join(path, _MANIFEST), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    with open(os.path.join(path, _BLOB), "wb") as f:
        f.write(b"".join(blobs))


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(os.path.join(path, _MANIFEST)) as f:
        manifest = json.load(f)
    if manifest.get("format") != 1:
        raise ValueError(f"unsupported checkpoint format in {path}")
    with open(os.path.join(path, _BLOB), "rb") as f:
        blob = f.read()
    tensors = {}
    for ent in manifest["tensors"]:
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=ent["offset"])
        tensors[ent["name"]] = arr.reshape(shape).copy()
    return tensors, manifest.get("meta", {})


def checkpoint_bytes_equal(path_a: str, path_b: str) -> bool:
    """True when both checkpoint directories hold byte-identical files."""
    for fname in (_MANIFEST, _BLOB):
        with open(os.path.join(path_a, fname), "rb") as fa:
            a = fa.read()
        with open(os.path.join(path_b, fname), "rb") as fb:
            b = fb.read()
        if a != b:
            return False
    return True
