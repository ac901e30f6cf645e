"""Adam optimizer over a named parameter dict."""

from __future__ import annotations

import numpy as np

from semflow.errors import TrainingDivergedError
from semflow.numerics import kernels
from semflow.numerics.tensor import Tensor


def adam_step(p, g, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update on raw arrays; updates p, m, v in place.

    All four arrays must be float64, C-contiguous and the same shape; t counts
    from 1. Contiguity is required because the update happens through flat
    views; a reshape copy would silently discard it.
    """
    if not (p.flags.c_contiguous and m.flags.c_contiguous and v.flags.c_contiguous):
        raise ValueError("adam_step requires C-contiguous parameter and moment arrays")
    kernels.adam_update(
        p.reshape(-1),
        np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
        m.reshape(-1),
        v.reshape(-1),
        int(t),
        float(lr),
        float(beta1),
        float(beta2),
        float(eps),
    )


class Adam:
    """Holds first/second moment state for a dict of named Tensors.

    Moments are exposed as plain arrays (`m`, `v`) plus the step counter so a
    checkpoint can capture and restore the exact optimizer state.
    """

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingDivergedError(
                    f"non-finite gradient in parameter '{name}'", step=self.t, param=name
                )
            adam_step(p.data, g, self.m[name], self.v[name], self.t,
                      self.lr, self.beta1, self.beta2, self.eps)
