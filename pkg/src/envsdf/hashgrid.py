"""Multi-resolution trainable feature grid with trilinear interpolation.

Each level stores a feature table indexed either densely (when the level's
corner lattice fits) or through a spatial hash (XOR of coordinate-wise
large-prime products, masked to the table size). Queries gather the 8 cell
corners per level, blend them trilinearly, and concatenate over levels.

All level tables live in one concatenated parameter tensor so a query is a
single gather and training checkpoints hold one array.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, _make

__all__ = ["HashGridConfig", "HashGridTable", "hash_grid_encode"]

_PRIMES = (np.uint32(1), np.uint32(2654435761), np.uint32(805459861))
_CORNERS = np.array([[i, j, k] for k in (0, 1) for j in (0, 1) for i in (0, 1)],
                    dtype=np.int64)  # (8, 3)


@dataclass(frozen=True)
class HashGridConfig:
    levels: int = 16
    features_per_level: int = 2
    table_size_log2: int = 19
    base_resolution: int = 16
    per_level_scale: float = 1.382
    box_min: tuple[float, float, float] = (-1.5, -1.5, -1.5)
    box_max: tuple[float, float, float] = (1.5, 1.5, 1.5)

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.per_level_scale <= 1.0:
            raise ValueError("per_level_scale must be > 1")
        if not all(hi > lo for lo, hi in zip(self.box_min, self.box_max)):
            raise ValueError("bounding box must have positive extent")

    @property
    def out_dim(self) -> int:
        return self.levels * self.features_per_level

    def resolutions(self) -> list[int]:
        """Cells per axis at each level, strictly increasing."""
        res = []
        prev = 0
        for l in range(self.levels):
            r = int(np.floor(self.base_resolution * self.per_level_scale**l))
            r = max(r, prev + 1)
            res.append(r)
            prev = r
        return res


class HashGridTable:
    """Learnable features for every level, concatenated row-wise."""

    def __init__(self, config: HashGridConfig, rng: np.random.Generator,
                 dtype=np.float32):
        self.config = config
        table_size = 1 << config.table_size_log2
        self.level_res = np.array(config.resolutions(), dtype=np.int64)
        rows, offsets, dense = [], [], []
        total = 0
        for r in self.level_res:
            corners = (int(r) + 1) ** 3
            n = corners if corners <= table_size else table_size
            dense.append(corners <= table_size)
            offsets.append(total)
            rows.append(n)
            total += n
        self.level_rows = np.array(rows, dtype=np.int64)
        self.level_offsets = np.array(offsets, dtype=np.int64)
        self.level_dense = np.array(dense, dtype=bool)
        self.table_size = table_size
        init = rng.uniform(-1e-4, 1e-4,
                           size=(total, config.features_per_level)).astype(dtype)
        self.table = Tensor(init, requires_grad=True)

    def parameters(self) -> list[Tensor]:
        return [self.table]

    def named_parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.table", self.table)]

    def set_trainable(self, flag: bool) -> None:
        self.table.requires_grad = flag

    def _level_indices(self, cells: np.ndarray, level: int) -> np.ndarray:
        """Row indices (within the concatenated table) for corner coords
        ``cells`` (N, 8, 3) at ``level``."""
        r = int(self.level_res[level])
        if self.level_dense[level]:
            side = r + 1
            idx = (cells[..., 2] * side + cells[..., 1]) * side + cells[..., 0]
        else:
            c = cells.astype(np.uint32)
            idx = ((c[..., 0] * _PRIMES[0])
                   ^ (c[..., 1] * _PRIMES[1])
                   ^ (c[..., 2] * _PRIMES[2])) & np.uint32(self.table_size - 1)
            idx = idx.astype(np.int64)
        return idx + self.level_offsets[level]


def _interp_setup(table: HashGridTable, pos: np.ndarray):
    """Shared forward geometry: corner rows, weights, and per-axis factors."""
    cfg = table.config
    lo = np.asarray(cfg.box_min)
    hi = np.asarray(cfg.box_max)
    u = np.clip((pos - lo) / (hi - lo), 0.0, 1.0)
    n = pos.shape[0]
    L = cfg.levels
    idx = np.empty((n, 8 * L), dtype=np.int64)
    w = np.empty((n, 8 * L), dtype=np.float64)
    fracs = np.empty((n, L, 3))
    for l in range(L):
        r = int(table.level_res[l])
        x = u * r
        c0 = np.minimum(np.floor(x), r - 1).astype(np.int64)
        f = x - c0  # (N, 3) in [0, 1]
        cells = c0[:, None, :] + _CORNERS[None, :, :]  # (N, 8, 3)
        idx[:, 8 * l:8 * (l + 1)] = table._level_indices(cells, l)
        wf = np.where(_CORNERS[None, :, :] == 1, f[:, None, :], 1.0 - f[:, None, :])
        w[:, 8 * l:8 * (l + 1)] = wf.prod(axis=-1)
        fracs[:, l, :] = f
    return idx, w, fracs, (lo, hi, u)


def hash_grid_encode(pos, table: HashGridTable) -> Tensor:
    """Encode positions (N, 3) to concatenated per-level features (N, L*F).

    ``pos`` may be a numpy array (constant) or a Tensor (then the output is
    also differentiable w.r.t. the positions). Positions outside the
    bounding box are clamped onto it before encoding.
    """
    pos_t = pos if isinstance(pos, Tensor) else None
    p = np.asarray(pos_t.data if pos_t is not None else pos, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"positions must be (N, 3), got {p.shape}")
    cfg = table.config
    L, F = cfg.levels, cfg.features_per_level
    n = p.shape[0]
    idx, w, fracs, (lo, hi, u) = _interp_setup(table, p)

    tab = table.table
    gathered = tab.data[idx]  # (N, 8L, F)
    out = (gathered * w[..., None]).reshape(n, L, 8, F).sum(axis=2)
    out = out.reshape(n, L * F).astype(tab.data.dtype)

    parents = (tab,) if pos_t is None else (tab, pos_t)

    def backward(g):
        g2 = np.asarray(g, dtype=np.float64).reshape(n, L, F)
        if tab.requires_grad:
            # Scatter w * g into corner rows, one bincount per feature column.
            contrib = np.repeat(g2, 8, axis=1).reshape(n, 8 * L, F) * w[..., None]
            flat_idx = idx.reshape(-1)
            buf = np.empty_like(tab.data, dtype=np.float64)
            for c in range(F):
                buf[:, c] = np.bincount(flat_idx, weights=contrib[..., c].reshape(-1),
                                        minlength=tab.data.shape[0])
            tab._accum_grad(buf.astype(tab.data.dtype))
        if pos_t is not None and pos_t.requires_grad:
            grad_pos = np.zeros((n, 3), dtype=np.float64)
            inside = (p >= lo) & (p <= hi)  # clamp has zero slope outside
            for l in range(L):
                r = int(table.level_res[l])
                feats = gathered[:, 8 * l:8 * (l + 1), :].astype(np.float64)  # (N,8,F)
                f = fracs[:, l, :]
                gl = g2[:, l, :]  # (N, F)
                for a in range(3):
                    sign = np.where(_CORNERS[None, :, a] == 1, 1.0, -1.0)  # (1,8)
                    others = [b for b in range(3) if b != a]
                    fac = np.ones((n, 8))
                    for b in others:
                        fac *= np.where(_CORNERS[None, :, b] == 1,
                                        f[:, None, b], 1.0 - f[:, None, b])
                    dout_df = np.einsum("nc,nkc,nk->n", gl, feats, sign * fac)
                    grad_pos[:, a] += dout_df * (r / (hi[a] - lo[a]))
            pos_t._accum_grad((grad_pos * inside).astype(pos_t.data.dtype))

    return _make(out, parents, backward)
