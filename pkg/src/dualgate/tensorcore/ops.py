"""Network primitives: convolution, batch normalisation, pooling, linear maps."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, DegenerateBatchError
from . import kernels
from .tensor import Tensor, add, check_finite, parameter, relu


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Zero-padded 2-d cross-correlation of an NCHW batch with an OIkk kernel."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ConfigurationError("conv2d expects NCHW input and OIkk kernel")
    n, c, h, w = x.shape
    o, i, k, k2 = weight.shape
    if c != i:
        raise ConfigurationError(f"input has {c} channels, kernel expects {i}")
    if k != k2:
        raise ConfigurationError("only square kernels are supported")
    if stride < 1 or padding < 0:
        raise ConfigurationError("stride must be positive and padding non-negative")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ConfigurationError("padded input is smaller than the kernel")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1

    x_nhwc = x.data.transpose(0, 2, 3, 1)
    cols = kernels.im2col(x_nhwc, k, stride, padding)
    # kernel columns ordered (kh, kw, c) to match the patch layout
    wmat = np.ascontiguousarray(weight.data.transpose(0, 2, 3, 1)).reshape(o, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, o)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        if weight.requires_grad:
            dw = (g2.T @ cols).reshape(o, k, k, c).transpose(0, 3, 1, 2)
            weight._accumulate(np.ascontiguousarray(dw))
        if x.requires_grad:
            dx = kernels.col2im(g2 @ wmat, (n, h, w, c), k, stride, padding)
            x._accumulate(np.ascontiguousarray(dx.transpose(0, 3, 1, 2)))

    return check_finite(Tensor._make(out, (x, weight), backward), "conv2d output")


class BatchNormState:
    """Affine parameters and running statistics for one normalisation site."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, name: str = "bn"):
        if not 0.0 < momentum < 1.0:
            raise ConfigurationError("batch-norm momentum must lie in (0, 1)")
        if eps <= 0:
            raise ConfigurationError("batch-norm eps must be positive")
        self.gamma = parameter(np.ones(channels), name=f"{name}.gamma")
        self.beta = parameter(np.zeros(channels), name=f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.momentum = momentum
        self.eps = eps
        self.training = True

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    @property
    def mode(self) -> str:
        return "training" if self.training else "inference"

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]

    def copy_from(self, other: "BatchNormState") -> None:
        self.gamma.data = other.gamma.data.copy()
        self.beta.data = other.beta.data.copy()
        self.running_mean = other.running_mean.copy()
        self.running_var = other.running_var.copy()


def batch_norm(x: Tensor, state: BatchNormState) -> Tensor:
    """Normalise per channel (axis 1) of an NC or NCHW tensor.

    Training mode uses biased batch statistics and updates the running
    estimates with an exponential moving average (unbiased variance, as
    is conventional); inference mode reads the running estimates.
    """
    if x.ndim not in (2, 4):
        raise ConfigurationError("batch_norm expects NC or NCHW input")
    c = x.shape[1]
    if c != state.channels:
        raise ConfigurationError(f"input has {c} channels, batch-norm state has {state.channels}")
    n = x.shape[0]
    x3 = x.data.reshape(n, c, -1)
    count = x3.shape[0] * x3.shape[2]
    bshape = (1, c, 1)
    dtype = x.data.dtype
    gamma = state.gamma.data.astype(np.float64)
    beta = state.beta.data.astype(np.float64)

    if state.training:
        if n < 2:
            raise DegenerateBatchError("training-mode batch norm needs at least 2 samples")
        s1, s2 = kernels.channel_sums(x3)
        mean = s1 / count
        var = np.maximum(s2 / count - mean * mean, 0.0)
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(np.float32)
        unbiased = var * (count / (count - 1))
        state.running_var = ((1 - m) * state.running_var + m * unbiased).astype(np.float32)
    else:
        mean = state.running_mean.astype(np.float64)
        var = state.running_var.astype(np.float64)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    scale = gamma * inv_std
    shift = beta - mean * scale
    out = x3 * scale.astype(dtype).reshape(bshape)
    out += shift.astype(dtype).reshape(bshape)
    out = out.reshape(x.shape)
    training = state.training

    def backward(g):
        g3 = g.reshape(n, c, -1)
        sum_g, sum_gx = kernels.channel_dot(g3, x3)
        dgamma = inv_std * (sum_gx - mean * sum_g)
        if state.gamma.requires_grad:
            state.gamma._accumulate(dgamma)
        if state.beta.requires_grad:
            state.beta._accumulate(sum_g)
        if x.requires_grad:
            dx = g3 * scale.astype(dtype).reshape(bshape)
            if training:
                # dx = scale * (g - mean(g) - xhat * mean(g * xhat)), expanded per channel
                coef_x = -scale * inv_std * dgamma / count
                const = -scale * sum_g / count - coef_x * mean
                dx += x3 * coef_x.astype(dtype).reshape(bshape)
                dx += const.astype(dtype).reshape(bshape)
            x._accumulate(dx.reshape(x.shape))

    return Tensor._make(out, (x, state.gamma, state.beta), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Average each NCHW plane down to one value, giving N×C."""
    if x.ndim != 4:
        raise ConfigurationError("global_avg_pool expects NCHW input")
    n, c, h, w = x.shape
    scale = 1.0 / (h * w)

    def backward(g):
        x._accumulate(np.broadcast_to((g * scale)[:, :, None, None], x.shape).astype(x.data.dtype))

    return Tensor._make(x.data.mean(axis=(2, 3)), (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with weight stored as (out, in)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ConfigurationError(f"linear shape mismatch {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ConfigurationError("linear bias must match the output width")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weight.data)
        if weight.requires_grad:
            weight._accumulate(g.T @ x.data)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward)


def primitive_forward(kind: str, *inputs: Tensor) -> Tensor:
    if kind == "relu":
        (x,) = inputs
        return relu(x)
    if kind == "global_avg_pool":
        (x,) = inputs
        return global_avg_pool(x)
    if kind == "linear":
        return linear(*inputs)
    if kind == "add":
        a, b = inputs
        if a.shape != b.shape:
            raise ConfigurationError(f"add shape mismatch {a.shape} vs {b.shape}")
        return add(a, b)
    raise ConfigurationError(f"unknown primitive {kind!r}")
