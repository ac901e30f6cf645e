"""Float64 tensor engine: autodiff, fused kernels, Adam, seeded RNG."""

from semflow.numerics.adam import Adam, adam_step
from semflow.numerics.rng import Rng
from semflow.numerics.tensor import (
    Tensor,
    concat,
    cross_entropy,
    embedding,
    gelu,
    matmul,
    mse,
    ones_param,
    param,
    rms_norm,
    softmax_attention,
    zeros_param,
)

__all__ = [
    "Adam",
    "Rng",
    "Tensor",
    "adam_step",
    "concat",
    "cross_entropy",
    "embedding",
    "gelu",
    "matmul",
    "mse",
    "ones_param",
    "param",
    "rms_norm",
    "softmax_attention",
    "zeros_param",
]
