"""Backend dispatch for the hot kernels.

At import time the compiled extension (`semflow.numerics._core`, built from
Cython) is preferred; if it is missing the NumPy fallback is used. The choice
can be forced with the environment variable ``SEMFLOW_KERNELS`` set to
``compiled`` or ``numpy``, or at runtime via `set_backend` (used by the
parity tests and the benchmark).

Both backends compute in float64. Results may differ across backends at the
level of floating-point summation order (~1e-15 relative), so determinism
guarantees hold per backend, not across them.
"""

from __future__ import annotations

import os

from semflow.errors import ConfigError
from semflow.numerics import _kernels_np

try:
    from semflow.numerics import _core

    HAVE_COMPILED = True
except ImportError:
    _core = None
    HAVE_COMPILED = False

_impl = _kernels_np


def available_backends() -> list[str]:
    return ["compiled", "numpy"] if HAVE_COMPILED else ["numpy"]


def set_backend(name: str) -> None:
    global _impl
    if name == "numpy":
        _impl = _kernels_np
    elif name == "compiled":
        if not HAVE_COMPILED:
            raise ConfigError("compiled kernel backend requested but the extension is not built")
        _impl = _core
    else:
        raise ConfigError(f"unknown kernel backend {name!r}; expected 'compiled' or 'numpy'")


def active_backend() -> str:
    return _impl.NAME


def masked_softmax_fwd(scores, mask):
    return _impl.masked_softmax_fwd(scores, mask)


def masked_softmax_bwd(weights, dout):
    return _impl.masked_softmax_bwd(weights, dout)


def rms_mod_fwd(x, a, eps):
    return _impl.rms_mod_fwd(x, a, eps)


def rms_mod_bwd(x, a, rstd, dy):
    return _impl.rms_mod_bwd(x, a, rstd, dy)


def gelu_fwd(x):
    return _impl.gelu_fwd(x)


def gelu_bwd(x, dy):
    return _impl.gelu_bwd(x, dy)


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    return _impl.adam_update(p, g, m, v, t, lr, beta1, beta2, eps)


_env = os.environ.get("SEMFLOW_KERNELS", "auto")
if _env == "auto":
    set_backend("compiled" if HAVE_COMPILED else "numpy")
else:
    set_backend(_env)
