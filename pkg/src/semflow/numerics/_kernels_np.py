"""NumPy implementations of the hot kernels.

This is the fallback backend; `semflow.numerics._core` provides the same
functions as a compiled extension. Signatures and semantics are identical,
and `tests/test_kernels.py` checks the two agree numerically. All arrays are
float64 and C-contiguous; masks are uint8 with 1 = attention allowed.
"""

from __future__ import annotations

import math

import numpy as np

NAME = "numpy"

_GELU_C = math.sqrt(2.0 / math.pi)


def masked_softmax_fwd(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise softmax over allowed keys; forbidden keys get exactly 0.

    scores: (R, Lq, Lk); mask: (Lq, Lk). Rows with no allowed key must be
    rejected by the caller; here they would produce NaN.
    """
    allowed = mask.astype(bool)
    neg = np.where(allowed, scores, -np.inf)
    m = np.max(neg, axis=-1, keepdims=True)
    e = np.exp(neg - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def masked_softmax_bwd(weights: np.ndarray, dout: np.ndarray) -> np.ndarray:
    """Gradient of softmax: w * (dout - sum(dout * w)). Zero rows stay zero."""
    inner = np.sum(dout * weights, axis=-1, keepdims=True)
    return weights * (dout - inner)


def rms_mod_fwd(x: np.ndarray, a: np.ndarray, eps: float):
    """y = a * x / sqrt(mean(x^2) + eps) along the last axis.

    x, a: (R, C). Returns (y, rstd) with rstd shape (R,).
    """
    ms = np.mean(x * x, axis=-1)
    rstd = 1.0 / np.sqrt(ms + eps)
    return a * x * rstd[:, None], rstd


def rms_mod_bwd(x: np.ndarray, a: np.ndarray, rstd: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """dx for rms_mod_fwd. Parameter gradients are handled by the caller."""
    c = x.shape[-1]
    ady = a * dy
    inner = np.sum(ady * x, axis=-1)  # (R,)
    return ady * rstd[:, None] - x * ((rstd**3) * inner / c)[:, None]


def gelu_fwd(x: np.ndarray) -> np.ndarray:
    """tanh-approximation GELU."""
    u = _GELU_C * (x + 0.044715 * x**3)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_bwd(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    du = _GELU_C * (1.0 + 3.0 * 0.044715 * x**2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def adam_update(
    p: np.ndarray,
    g: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
) -> None:
    """One fused Adam step, in place on flat float64 arrays."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
