"""Minimal reverse-mode automatic differentiation over numpy arrays.

Design goals, in order: correctness of gradients (every primitive is
finite-difference checked in the test suite), determinism (replaying the
same op sequence produces bitwise-identical results), and enough speed for
small-MLP training (all heavy lifting stays inside vectorized numpy calls).

A ``Tape`` records operations in creation order while active; since the
graph is built forward, the creation order is already a topological order
and ``Tape.backward`` simply walks it in reverse, visiting each node once.
Tensors created while no tape is active (or from inputs that do not require
gradients) are plain value carriers with no recorded history.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "matmul",
    "relu",
    "softplus",
    "sigmoid",
    "exp",
    "log",
    "sqrt",
    "sin",
    "cos",
    "absolute",
    "square",
    "maximum",
    "minimum",
    "clip",
    "where",
    "concat",
    "reshape",
    "tsum",
    "tmean",
    "cumsum_exclusive",
    "gather_rows",
    "scatter_rows",
    "sdf_to_density_op",
    "srgb_encode_op",
]

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Op recording for one forward pass; reversed replay yields gradients."""

    def __init__(self):
        self._nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"
        return False

    def _record(self, node: "Tensor") -> None:
        self._nodes.append(node)

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, root: "Tensor", seed: np.ndarray | None = None) -> None:
        """Accumulate d(root)/d(leaf) into every reachable leaf's ``.grad``."""
        if seed is None:
            if root.data.size != 1:
                raise ValueError("backward() without seed requires a scalar root")
            seed = np.ones_like(root.data)
        root._accum_grad(np.asarray(seed, dtype=root.data.dtype))
        for node in reversed(self._nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        # Intermediate grads are not reusable after replay; free them so only
        # leaves keep gradients and memory is returned promptly.
        for node in self._nodes:
            node.grad = None
            node._backward = None
        self._nodes.clear()


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A numpy array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward = None

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def _accum_grad(self, g: np.ndarray) -> None:
        # No in-place mutation anywhere in the engine, so holding references
        # (possibly views) is safe; accumulation allocates a fresh array.
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        return float(self.data)

    # -- operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return getitem(self, key)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Coerce a (tensor, scalar) pair without promoting the tensor's dtype
    (a bare Python float would otherwise drag float32 graphs to float64)."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return _as_tensor(a), _as_tensor(b)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Build an op output, recording it when grads are needed and a tape is live."""
    tape = _active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._backward = backward
        tape._record(out)
    return out


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accum_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum_grad(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accum_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum_grad(_unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accum_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum_grad(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accum_grad(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accum_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)
    data = a.data**p

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g * p * a.data ** (p - 1.0))

    return _make(data, (a,), backward)


def matmul(a, b) -> Tensor:
    """2D matrix product; gradients flow to both operands."""
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g @ b.data.T)
        if b.requires_grad:
            b._accum_grad(a.data.T @ g)

    return _make(data, (a, b), backward)


def linear(x, w, b, activation: str = "identity") -> Tensor:
    """Fused affine layer x @ w + b with an optional ReLU.

    One op per layer keeps the tape short and reuses a single activation
    mask on the backward pass (the hot path of MLP training).
    """
    if activation not in ("identity", "relu"):
        raise ValueError(f"linear() supports identity/relu, got {activation!r}")
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    z = x.data @ w.data
    z += b.data  # fresh buffer from the matmul; in-place is safe
    if activation == "relu":
        np.maximum(z, 0, out=z)

    def backward(g):
        if activation == "relu":
            if g.dtype == z.dtype:
                # z is this node's own output; nothing reads it after this
                # point in the reverse sweep, so its buffer is recycled for
                # the masked gradient (saves a large allocation per layer).
                gm = np.multiply(g, z > 0, out=z)
            else:
                gm = g * (z > 0)
        else:
            gm = g
        if x.requires_grad:
            x._accum_grad(gm @ w.data.T)
        if w.requires_grad:
            w._accum_grad(x.data.T @ gm)
        if b.requires_grad:
            b._accum_grad(gm.sum(axis=0))

    return _make(z, (x, w, b), backward)


# -- unary math ------------------------------------------------------------------


def exp(a) -> Tensor:
    a = _as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g * data)

    return _make(data, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g / a.data)

    return _make(data, (a,), backward)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    data = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g * (0.5 / data))

    return _make(data, (a,), backward)


def sin(a) -> Tensor:
    a = _as_tensor(a)
    data = np.sin(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g * np.cos(a.data))

    return _make(data, (a,), backward)


def cos(a) -> Tensor:
    a = _as_tensor(a)
    data = np.cos(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(-g * np.sin(a.data))

    return _make(data, (a,), backward)


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    data = np.abs(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g * np.sign(a.data))

    return _make(data, (a,), backward)


def square(a) -> Tensor:
    a = _as_tensor(a)
    data = a.data * a.data

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g * (2.0 * a.data))

    return _make(data, (a,), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g * (a.data > 0))

    return _make(data, (a,), backward)


def softplus(a) -> Tensor:
    # log(1 + e^x) computed stably; derivative is sigmoid(x).
    a = _as_tensor(a)
    x = a.data
    data = np.where(x > 20.0, x, np.log1p(np.exp(np.minimum(x, 20.0)))).astype(x.dtype)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g * _sigmoid_np(x))

    return _make(data, (a,), backward)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    data = _sigmoid_np(a.data)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g * data * (1.0 - data))

    return _make(data, (a,), backward)


# -- comparisons / selection -----------------------------------------------------


def maximum(a, b) -> Tensor:
    """Elementwise max; at ties the gradient is routed to the first argument."""
    a, b = _pair(a, b)
    take_a = a.data >= b.data
    data = np.where(take_a, a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(_unbroadcast(g * take_a, a.data.shape))
        if b.requires_grad:
            b._accum_grad(_unbroadcast(g * ~take_a, b.data.shape))

    return _make(data, (a, b), backward)


def minimum(a, b) -> Tensor:
    a, b = _pair(a, b)
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(_unbroadcast(g * take_a, a.data.shape))
        if b.requires_grad:
            b._accum_grad(_unbroadcast(g * ~take_a, b.data.shape))

    return _make(data, (a, b), backward)


def clip(a, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    data = np.clip(a.data, lo, hi)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g * inside)

    return _make(data, (a,), backward)


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select by a constant boolean mask (the mask itself is not differentiable)."""
    a, b = _pair(a, b)
    cond = np.asarray(cond, dtype=bool)
    data = np.where(cond, a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(_unbroadcast(g * cond, a.data.shape))
        if b.requires_grad:
            b._accum_grad(_unbroadcast(g * ~cond, b.data.shape))

    return _make(data, (a, b), backward)


# -- shape ops ---------------------------------------------------------------------


def _is_basic_key(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (int, slice, type(Ellipsis))) for p in parts)


def getitem(a, key) -> Tensor:
    a = _as_tensor(a)
    data = a.data[key]
    basic = _is_basic_key(key)

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            if basic:
                buf[key] = g  # basic indexing never selects an element twice
            else:
                np.add.at(buf, key, g)
            a._accum_grad(buf)

    return _make(data, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g.reshape(a.data.shape))

    return _make(data, (a,), backward)


def concat(parts: list, axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accum_grad(g[tuple(idx)])

    return _make(data, tuple(parts), backward)


# -- reductions ----------------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False, accum_f64: bool = False) -> Tensor:
    """Sum reduction; ``accum_f64`` accumulates in float64 (loss reductions)."""
    a = _as_tensor(a)
    if accum_f64:
        data = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64)
    else:
        data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            g = np.asarray(g, dtype=a.data.dtype)
            if axis is None:
                a._accum_grad(np.broadcast_to(g, a.data.shape).copy())
            else:
                if not keepdims:
                    g = np.expand_dims(g, axis)
                a._accum_grad(np.broadcast_to(g, a.data.shape).copy())

    return _make(data, (a,), backward)


def tmean(a, axis=None, keepdims: bool = False, accum_f64: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[ax] for ax in axis]))
    else:
        n = a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims, accum_f64=accum_f64), 1.0 / n)


def cumsum_exclusive(a, axis: int = -1) -> Tensor:
    """y_i = sum_{j<i} x_j along ``axis``; y_0 = 0."""
    a = _as_tensor(a)
    cs = np.cumsum(a.data, axis=axis)
    data = np.zeros_like(cs)
    src = [slice(None)] * cs.ndim
    dst = [slice(None)] * cs.ndim
    src[axis] = slice(None, -1)
    dst[axis] = slice(1, None)
    data[tuple(dst)] = cs[tuple(src)]

    def backward(g):
        if a.requires_grad:
            # d/dx_j = sum over i>j of g_i: reversed exclusive cumsum.
            flipped = np.flip(g, axis=axis)
            cs_g = np.cumsum(flipped, axis=axis)
            out = np.zeros_like(cs_g)
            out[tuple(dst)] = cs_g[tuple(src)]
            a._accum_grad(np.flip(out, axis=axis))

    return _make(data, (a,), backward)


# -- gather / scatter ------------------------------------------------------------------


def _row_accumulate(idx: np.ndarray, g: np.ndarray, n_rows: int) -> np.ndarray:
    """Sum rows of ``g`` into ``n_rows`` buckets given per-row bucket ids."""
    if g.ndim == 1:
        return np.bincount(idx, weights=g, minlength=n_rows).astype(g.dtype)
    out = np.empty((n_rows, g.shape[1]), dtype=g.dtype)
    for c in range(g.shape[1]):
        out[:, c] = np.bincount(idx, weights=g[:, c], minlength=n_rows)
    return out


def gather_rows(a, idx: np.ndarray) -> Tensor:
    """Select rows ``a[idx]``; duplicated indices accumulate on backward."""
    a = _as_tensor(a)
    idx = np.asarray(idx)
    data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            a._accum_grad(_row_accumulate(idx, g, a.data.shape[0]))

    return _make(data, (a,), backward)


def scatter_rows(a, idx: np.ndarray, n_rows: int) -> Tensor:
    """Place rows of ``a`` at positions ``idx`` in a zero buffer of ``n_rows`` rows.

    ``idx`` must not contain duplicates (each target row written at most once).
    """
    a = _as_tensor(a)
    idx = np.asarray(idx)
    shape = (n_rows,) + a.data.shape[1:]
    data = np.zeros(shape, dtype=a.data.dtype)
    data[idx] = a.data

    def backward(g):
        if a.requires_grad:
            a._accum_grad(g[idx])

    return _make(data, (a,), backward)


# -- fused domain primitives --------------------------------------------------------------


def sdf_to_density_op(s, beta, beta_min: float = 1e-4) -> Tensor:
    """Laplace-CDF density: high inside (s<0), low outside, scale 1/beta.

    sigma = (1/(2b)) exp(-s/b)      for s >= 0
    sigma = (1/b) (1 - 0.5 exp(s/b)) for s < 0
    Continuous at s=0 with value 1/(2b); monotone nonincreasing in s.
    """
    s, beta = _as_tensor(s), _as_tensor(beta)
    b = np.maximum(beta.data, beta_min)
    x = s.data / b
    outside = s.data >= 0
    e = np.exp(-np.abs(x))
    sigma = np.where(outside, 0.5 * e / b, (1.0 - 0.5 * e) / b).astype(s.data.dtype)

    def backward(g):
        # d(sigma)/ds = -(1/(2b^2)) exp(-|s|/b) on both branches.
        dsig_ds = -0.5 * e / (b * b)
        if s.requires_grad:
            s._accum_grad(g * dsig_ds)
        if beta.requires_grad:
            # Differentiate each branch w.r.t. b directly (x = s/b, e = exp(-|x|)).
            out_b = 0.5 * e * (x - 1.0) / (b * b)
            in_b = -(1.0 - 0.5 * e) / (b * b) + 0.5 * e * (x / (b * b))
            dsig_db = np.where(outside, out_b, in_b)
            dsig_db = np.where(beta.data < beta_min, 0.0, dsig_db)
            if beta.data.size == 1:
                beta._accum_grad(np.sum(g * dsig_db, dtype=np.float64).astype(beta.data.dtype).reshape(beta.data.shape))
            else:
                beta._accum_grad(_unbroadcast(g * dsig_db, beta.data.shape))

    return _make(sigma, (s, beta), backward)


_SRGB_KNEE = 0.0031308
_SRGB_LIN = 12.92
_SRGB_A = 1.055
_SRGB_GAMMA = 1.0 / 2.4


def srgb_encode_op(a) -> Tensor:
    """Linear -> sRGB transfer with final clamp to [0, 1].

    Below the knee the transfer is linear (12.92 x); above it is
    1.055 x^(1/2.4) - 0.055. Differentiable except at the clamp boundary
    and exactly at the knee.
    """
    a = _as_tensor(a)
    x = np.maximum(a.data, 0.0)
    low = x <= _SRGB_KNEE
    safe = np.where(low, 1.0, x)
    enc = np.where(low, _SRGB_LIN * x, _SRGB_A * safe**_SRGB_GAMMA - 0.055)
    clipped = enc >= 1.0
    data = np.minimum(enc, 1.0).astype(a.data.dtype)

    def backward(g):
        if a.requires_grad:
            deriv = np.where(low, _SRGB_LIN, _SRGB_A * _SRGB_GAMMA * safe ** (_SRGB_GAMMA - 1.0))
            deriv = np.where(clipped | (a.data < 0), 0.0, deriv)
            a._accum_grad(g * deriv)

    return _make(data, (a,), backward)
