"""Dense float64 tensors with reverse-mode automatic differentiation.

A `Tensor` wraps a NumPy float64 array plus an optional gradient and a
backward closure; calling `backward()` on a scalar output walks the recorded
graph in reverse topological order. Shapes follow NumPy broadcasting, with
gradients summed back down to each operand's shape.

Heavy inner loops (masked softmax, modulated RMSNorm, GELU) are routed
through `semflow.numerics.kernels`, which picks the compiled core or the
NumPy fallback at import time. Everything else is plain NumPy: at desk scale
float64 keeps finite-difference gradient checks tight and speed is secondary.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from semflow.errors import ConfigError, DimensionError
from semflow.numerics import kernels


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of NumPy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- graph plumbing ----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accum_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise DimensionError(f"backward() requires a scalar output, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.accum_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- construction helpers ----------------------------------------------

    @staticmethod
    def _wrap(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad or p._backward is not None for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        a, b = self, Tensor._wrap(other)
        out = Tensor._make(a.data + b.data, (a, b), None)

        def bwd():
            if a.requires_grad:
                a.accum_grad(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b.accum_grad(_unbroadcast(out.grad, b.shape))

        out._backward = bwd if out.requires_grad else None
        return out

    __radd__ = __add__

    def __mul__(self, other):
        a, b = self, Tensor._wrap(other)
        out = Tensor._make(a.data * b.data, (a, b), None)

        def bwd():
            if a.requires_grad:
                a.accum_grad(_unbroadcast(out.grad * b.data, a.shape))
            if b.requires_grad:
                b.accum_grad(_unbroadcast(out.grad * a.data, b.shape))

        out._backward = bwd if out.requires_grad else None
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-Tensor._wrap(other))

    def __rsub__(self, other):
        return Tensor._wrap(other) + (-self)

    def __truediv__(self, other):
        a, b = self, Tensor._wrap(other)
        out = Tensor._make(a.data / b.data, (a, b), None)

        def bwd():
            if a.requires_grad:
                a.accum_grad(_unbroadcast(out.grad / b.data, a.shape))
            if b.requires_grad:
                b.accum_grad(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))

        out._backward = bwd if out.requires_grad else None
        return out

    def __rtruediv__(self, other):
        return Tensor._wrap(other) / self

    def __pow__(self, exponent: float):
        a = self
        out = Tensor._make(a.data**exponent, (a,), None)

        def bwd():
            if a.requires_grad:
                a.accum_grad(out.grad * exponent * a.data ** (exponent - 1))

        out._backward = bwd if out.requires_grad else None
        return out

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        out = Tensor._make(a.data.reshape(shape), (a,), None)

        def bwd():
            if a.requires_grad:
                a.accum_grad(out.grad.reshape(a.shape))

        out._backward = bwd if out.requires_grad else None
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = np.argsort(axes)
        out = Tensor._make(np.ascontiguousarray(a.data.transpose(axes)), (a,), None)

        def bwd():
            if a.requires_grad:
                a.accum_grad(out.grad.transpose(tuple(inv)))

        out._backward = bwd if out.requires_grad else None
        return out

    def __getitem__(self, key):
        a = self
        out = Tensor._make(a.data[key], (a,), None)

        def bwd():
            if a.requires_grad:
                g = np.zeros_like(a.data)
                np.add.at(g, key, out.grad)
                a.accum_grad(g)

        out._backward = bwd if out.requires_grad else None
        return out

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        out = Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), None)

        def bwd():
            if a.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                a.accum_grad(np.broadcast_to(g, a.shape).copy())

        out._backward = bwd if out.requires_grad else None
        return out

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- elementwise functions ---------------------------------------------------

    def exp(self):
        a = self
        out = Tensor._make(np.exp(a.data), (a,), None)

        def bwd():
            if a.requires_grad:
                a.accum_grad(out.grad * out.data)

        out._backward = bwd if out.requires_grad else None
        return out

    def log(self):
        a = self
        out = Tensor._make(np.log(a.data), (a,), None)

        def bwd():
            if a.requires_grad:
                a.accum_grad(out.grad / a.data)

        out._backward = bwd if out.requires_grad else None
        return out

    def tanh(self):
        a = self
        out = Tensor._make(np.tanh(a.data), (a,), None)

        def bwd():
            if a.requires_grad:
                a.accum_grad(out.grad * (1.0 - out.data * out.data))

        out._backward = bwd if out.requires_grad else None
        return out

    def clip(self, lo: float, hi: float):
        """Clamp; gradient passes through only inside [lo, hi]."""
        a = self
        out = Tensor._make(np.clip(a.data, lo, hi), (a,), None)

        def bwd():
            if a.requires_grad:
                inside = (a.data >= lo) & (a.data <= hi)
                a.accum_grad(out.grad * inside)

        out._backward = bwd if out.requires_grad else None
        return out


# -- free functions ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with NumPy batching semantics.

    Inner dimensions must agree; raises DimensionError naming both shapes.
    """
    a, b = Tensor._wrap(a), Tensor._wrap(b)
    if a.data.ndim < 1 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = Tensor._make(np.matmul(a.data, b.data), (a, b), None)

    def bwd():
        g = out.grad
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.accum_grad(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.accum_grad(_unbroadcast(gb, b.shape))

    out._backward = bwd if out.requires_grad else None
    return out


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [Tensor._wrap(t) for t in tensors]
    out = Tensor._make(np.concatenate([t.data for t in ts], axis=axis), ts, None)
    sizes = [t.shape[axis] for t in ts]

    def bwd():
        offset = 0
        for t, s in zip(ts, sizes):
            if t.requires_grad:
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(offset, offset + s)
                t.accum_grad(out.grad[tuple(idx)])
            offset += s

    out._backward = bwd if out.requires_grad else None
    return out


def gelu(x: Tensor) -> Tensor:
    x = Tensor._wrap(x)
    flat = np.ascontiguousarray(x.data.reshape(-1))
    out = Tensor._make(kernels.gelu_fwd(flat).reshape(x.shape), (x,), None)

    def bwd():
        if x.requires_grad:
            g = kernels.gelu_bwd(flat, np.ascontiguousarray(out.grad.reshape(-1)))
            x.accum_grad(g.reshape(x.shape))

    out._backward = bwd if out.requires_grad else None
    return out


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row gather: out[..., :] = table[idx[...], :]."""
    idx = np.asarray(idx)
    out = Tensor._make(table.data[idx], (table,), None)

    def bwd():
        if table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, idx.reshape(-1), out.grad.reshape(-1, table.shape[-1]))
            table.accum_grad(g)

    out._backward = bwd if out.requires_grad else None
    return out


def softmax_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray) -> Tensor:
    """Masked scaled dot-product attention.

    q: (..., Lq, d), k: (..., Lk, d), v: (..., Lk, dv); mask is a boolean
    (Lq, Lk) grid with True = attention allowed. Masked keys get exactly zero
    weight; each allowed row's weights sum to 1. A query row with every key
    masked is a configuration error, never a silent NaN.
    """
    q, k, v = Tensor._wrap(q), Tensor._wrap(k), Tensor._wrap(v)
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"q/k head dims disagree: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"k/v key counts disagree: {k.shape} vs {v.shape}")
    mask = np.asarray(mask)
    if mask.shape != (q.shape[-2], k.shape[-2]):
        raise DimensionError(
            f"mask shape {mask.shape} does not match (queries, keys) = "
            f"({q.shape[-2]}, {k.shape[-2]})"
        )
    if not mask.any(axis=-1).all():
        bad = int(np.flatnonzero(~mask.any(axis=-1))[0])
        raise ConfigError(f"attention mask leaves query row {bad} with no allowed key")

    lead = q.shape[:-2]
    lq, d = q.shape[-2], q.shape[-1]
    lk, dv = v.shape[-2], v.shape[-1]
    scale = 1.0 / math.sqrt(d)

    q3 = np.ascontiguousarray(q.data.reshape(-1, lq, d))
    k3 = np.ascontiguousarray(k.data.reshape(-1, lk, d))
    v3 = np.ascontiguousarray(v.data.reshape(-1, lk, dv))
    scores = np.matmul(q3, np.swapaxes(k3, -1, -2)) * scale
    w = kernels.masked_softmax_fwd(np.ascontiguousarray(scores), mask.astype(np.uint8))
    out_data = np.matmul(w, v3).reshape(*lead, lq, dv)
    out = Tensor._make(out_data, (q, k, v), None)

    def bwd():
        g3 = np.ascontiguousarray(out.grad.reshape(-1, lq, dv))
        if v.requires_grad:
            gv = np.matmul(np.swapaxes(w, -1, -2), g3)
            v.accum_grad(gv.reshape(v.shape))
        if q.requires_grad or k.requires_grad:
            dw = np.matmul(g3, np.swapaxes(v3, -1, -2))
            ds = kernels.masked_softmax_bwd(w, np.ascontiguousarray(dw))
            if q.requires_grad:
                gq = np.matmul(ds, k3) * scale
                q.accum_grad(gq.reshape(q.shape))
            if k.requires_grad:
                gk = np.matmul(np.swapaxes(ds, -1, -2), q3) * scale
                k.accum_grad(gk.reshape(k.shape))

    out._backward = bwd if out.requires_grad else None
    return out


def rms_norm(x: Tensor, gain: Tensor, scale: Tensor | float = 1.0, eps: float = 1e-6) -> Tensor:
    """Root-mean-square normalization along the last (channel) axis.

    out = scale * gain * x / sqrt(mean(x^2) + eps). `gain` and `scale`
    broadcast over the channel axis; `scale` is typically a per-sample
    modulation derived from the timestep embedding.
    """
    x, gain, scale = Tensor._wrap(x), Tensor._wrap(gain), Tensor._wrap(scale)
    c = x.shape[-1]
    gain_b = np.broadcast_to(gain.data, x.shape)
    scale_b = np.broadcast_to(scale.data, x.shape)
    a2 = np.ascontiguousarray((gain_b * scale_b).reshape(-1, c))
    x2 = np.ascontiguousarray(x.data.reshape(-1, c))
    y2, rstd = kernels.rms_mod_fwd(x2, a2, eps)
    out = Tensor._make(y2.reshape(x.shape), (x, gain, scale), None)

    def bwd():
        dy2 = np.ascontiguousarray(out.grad.reshape(-1, c))
        if x.requires_grad:
            dx = kernels.rms_mod_bwd(x2, a2, rstd, dy2)
            x.accum_grad(dx.reshape(x.shape))
        if gain.requires_grad or scale.requires_grad:
            da = (x2 * rstd[:, None] * dy2).reshape(x.shape)
            if gain.requires_grad:
                gain.accum_grad(_unbroadcast(da * scale_b, gain.shape))
            if scale.requires_grad:
                scale.accum_grad(_unbroadcast(da * gain_b, scale.shape))

    out._backward = bwd if out.requires_grad else None
    return out


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over rows; targets are class indices."""
    logits = Tensor._wrap(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=-1, keepdims=True)
    nll = -np.log(probs[np.arange(n), targets] + 1e-300)
    out = Tensor._make(np.asarray(nll.mean()), (logits,), None)

    def bwd():
        if logits.requires_grad:
            g = probs.copy()
            g[np.arange(n), targets] -= 1.0
            logits.accum_grad(out.grad * g / n)

    out._backward = bwd if out.requires_grad else None
    return out


def mse(pred: Tensor, target: np.ndarray | Tensor) -> Tensor:
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    diff = pred - Tensor(target)
    return (diff * diff).mean()


def param(rng, shape: tuple[int, ...], std: float | None = None) -> Tensor:
    """Trainable parameter; default init is fan-in scaled normal."""
    if std is None:
        fan_in = shape[0] if len(shape) > 1 else max(shape[0], 1)
        std = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.normal(shape, std=std), requires_grad=True)


def zeros_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)
