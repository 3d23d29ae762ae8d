"""Small fully-connected networks, feature normalization, and Adam.

The networks here are deliberately tiny (a few hidden layers of width
32..256); everything runs through the reverse-mode engine in
:mod:`envsdf.tensor`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "Mlp",
    "l2_normalize",
    "instance_normalize",
    "normalize_features",
    "AdamState",
    "adam_step",
    "grad_check",
    "NanGradientError",
]

_ACTIVATIONS = {
    "relu": T.relu,
    "softplus": T.softplus,
    "sigmoid": T.sigmoid,
    "identity": lambda x: x,
}


class Mlp:
    """Feed-forward net: ``widths[0] -> ... -> widths[-1]`` with one activation
    per layer (hidden layers share ``hidden_act``; the last layer uses
    ``out_act``, usually ``identity`` so callers can split heads first).
    """

    def __init__(self, widths: list[int], rng: np.random.Generator,
                 hidden_act: str = "relu", out_act: str = "identity",
                 dtype=np.float32, name: str = "mlp"):
        if len(widths) < 2:
            raise ValueError("need at least an input and an output width")
        self.widths = list(widths)
        self.hidden_act = hidden_act
        self.out_act = out_act
        self.name = name
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(6.0 / fan_in)  # Kaiming-uniform, fan-in scaling
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
            b = np.zeros(fan_out, dtype=dtype)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(b, requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 2 or x.data.shape[1] != self.widths[0]:
            raise ValueError(
                f"{self.name}: expected input (*, {self.widths[0]}), got {x.data.shape}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            act = self.out_act if i == last else self.hidden_act
            if act in ("identity", "relu"):
                h = T.linear(h, w, b, activation=act)
            else:
                h = _ACTIVATIONS[act](T.linear(h, w, b))
        return h

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def named_parameters(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"{prefix}.layer{i}.weight", w))
            out.append((f"{prefix}.layer{i}.bias", b))
        return out

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def param_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p.data, dtype=np.float32).tobytes())
        return h.hexdigest()


def l2_normalize(v: Tensor, eps: float = 1e-8) -> Tensor:
    """Scale each last-axis vector to unit length; vectors shorter than
    ``eps`` are divided by ``eps`` instead (so zero stays zero)."""
    norm = T.sqrt(T.tsum(T.square(v), axis=-1, keepdims=True))
    return v / T.maximum(norm, float(eps))


def instance_normalize(v: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each feature vector to zero mean / unit variance over the
    feature axis."""
    mu = T.tmean(v, axis=-1, keepdims=True)
    centered = v - mu
    var = T.tmean(T.square(centered), axis=-1, keepdims=True)
    return centered / T.sqrt(var + eps)


def normalize_features(v: Tensor, mode: str) -> Tensor:
    """Apply the configured feature-normalization stage (``l2`` | ``instance``
    | ``none``)."""
    if mode == "l2":
        return l2_normalize(v)
    if mode == "instance":
        return instance_normalize(v)
    if mode == "none":
        return v
    raise ValueError(f"unknown normalization mode: {mode!r}")


class NanGradientError(RuntimeError):
    """Raised when a training step produces a non-finite gradient."""


@dataclass
class AdamState:
    """Per-parameter first/second moments plus hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[Tensor], lr: float = 1e-3) -> "AdamState":
        st = cls(lr=lr)
        st.m = [np.zeros_like(p.data) for p in params]
        st.v = [np.zeros_like(p.data) for p in params]
        return st


def adam_step(params: list[Tensor], state: AdamState, lr: float | None = None) -> None:
    """One bias-corrected Adam update, in place, from ``p.grad`` buffers.

    Parameters with ``grad is None`` (e.g. frozen nets sharing the list) are
    skipped. Grad buffers are cleared afterwards.
    """
    state.step += 1
    step_lr = state.lr if lr is None else lr
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for i, p in enumerate(params):
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NanGradientError(f"non-finite gradient in parameter {i} at step {state.step}")
        g = np.asarray(g, dtype=p.data.dtype)
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data = p.data - step_lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad = None


def grad_check(f, point: Tensor, h: float = 1e-3, tiny: float = 1e-6) -> float:
    """Max relative error between tape gradients of ``f`` and central
    finite differences at ``point``.

    ``f`` maps a Tensor to a scalar Tensor. Differences are evaluated in
    float64 regardless of the point's storage dtype. Coordinates where both
    gradients are below ``tiny`` count as exact (relative error of noise
    around zero is meaningless).
    """
    x64 = np.asarray(point.data, dtype=np.float64)
    p = Tensor(x64.copy(), requires_grad=True)
    with T.Tape() as tape:
        y = f(p)
        tape.backward(y)
    g_auto = np.zeros_like(x64) if p.grad is None else np.asarray(p.grad, dtype=np.float64)

    flat = x64.reshape(-1)
    g_fd = np.zeros_like(flat)
    for i in range(flat.size):
        for sgn, slot in ((+1.0, 0), (-1.0, 1)):
            bumped = flat.copy()
            bumped[i] += sgn * h
            val = f(Tensor(bumped.reshape(x64.shape))).data
            if slot == 0:
                f_plus = float(val)
            else:
                f_minus = float(val)
        g_fd[i] = (f_plus - f_minus) / (2.0 * h)

    g_auto_flat = g_auto.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(g_auto_flat), np.abs(g_fd)), tiny)
    rel = np.abs(g_auto_flat - g_fd) / denom
    rel[(np.abs(g_auto_flat) < tiny) & (np.abs(g_fd) < tiny)] = 0.0
    return float(rel.max()) if rel.size else 0.0
