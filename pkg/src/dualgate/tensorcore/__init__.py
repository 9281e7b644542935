"""Minimal dense-tensor engine with reverse-mode gradients."""
from .gradcheck import gradient_check
from .kernels import BACKEND
from .ops import BatchNormState, batch_norm, conv2d, global_avg_pool, linear, primitive_forward
from .tensor import (
    Tensor,
    as_tensor,
    default_dtype,
    no_grad,
    parameter,
    precision,
    relu,
)

__all__ = [
    "BACKEND",
    "BatchNormState",
    "Tensor",
    "as_tensor",
    "batch_norm",
    "conv2d",
    "default_dtype",
    "global_avg_pool",
    "gradient_check",
    "linear",
    "no_grad",
    "parameter",
    "precision",
    "primitive_forward",
    "relu",
]
