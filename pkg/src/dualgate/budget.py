"""FLOPs accounting for gated blocks and the budget penalty on it.

FLOPs are counted as multiply-accumulates (MACs). Only gated residual
blocks enter the ratio; the stem and shortcut projections are excluded.
A block with active channel fraction p costs ``p * conv1 + p * conv2 +
gate`` where conv1 is reduced through its output channels, conv2 through
its input channels, and the gate network cost is fixed.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .encoder import EncoderConfig
from .errors import ConfigurationError, ContractError
from .gating import REDUCTION_RATE, GateMask
from .tensorcore import Tensor


def static_flops(k: int, c_in: int, c_out: int, h_out: int, w_out: int) -> int:
    """MACs of a dense k×k convolution producing a c_out×h_out×w_out map."""
    if min(k, c_in, c_out, h_out, w_out) <= 0:
        raise ConfigurationError("convolution dimensions must be positive")
    return k * k * c_in * c_out * h_out * w_out


def gate_flops(c_prev: int, c_block: int, r: int = REDUCTION_RATE) -> int:
    hidden = c_prev // r
    return c_prev * hidden + hidden * c_block


@dataclass(frozen=True)
class BlockFlops:
    conv1: int
    conv2: int
    gate: int
    width: int

    @property
    def original(self) -> int:
        return self.conv1 + self.conv2

    @property
    def per_channel(self) -> int:
        """MACs removed from conv1 plus conv2 when one channel is switched off."""
        return self.original // self.width


@dataclass(frozen=True)
class BudgetConfig:
    t_d: float = 0.5
    lam: float = 5.0

    def __post_init__(self):
        if not 0 < self.t_d <= 1:
            raise ConfigurationError("target budget t_d must lie in (0, 1]")
        if self.lam < 0:
            raise ConfigurationError("lambda must be non-negative")


class FlopsModel:
    def __init__(self, blocks: list[BlockFlops]):
        if not blocks:
            raise ConfigurationError("FLOPs model needs at least one gated block")
        if any(min(b.conv1, b.conv2, b.gate) <= 0 for b in blocks):
            raise ConfigurationError("all MAC counts must be positive")
        self.blocks = list(blocks)

    @classmethod
    def from_config(cls, config: EncoderConfig) -> "FlopsModel":
        blocks = []
        for spec in config.block_specs():
            s = spec.out_size
            blocks.append(BlockFlops(
                conv1=static_flops(3, spec.c_in, spec.c_out, s, s),
                conv2=static_flops(3, spec.c_out, spec.c_out, s, s),
                gate=gate_flops(spec.c_in, spec.c_out),
                width=spec.c_out,
            ))
        return cls(blocks)

    @property
    def total_original(self) -> int:
        return sum(b.original for b in self.blocks)

    @property
    def total_gate(self) -> int:
        return sum(b.gate for b in self.blocks)

    @property
    def gate_overhead(self) -> float:
        return self.total_gate / self.total_original


def _mask_arrays(masks) -> list[np.ndarray]:
    out = []
    for m in masks:
        if isinstance(m, GateMask):
            out.append(m.mask.data)
        elif isinstance(m, Tensor):
            out.append(m.data)
        else:
            out.append(np.asarray(m))
    return out


def flops_ratio_value(masks, model: FlopsModel) -> float:
    """Exact batch-average FLOPs ratio for binary masks, as a float."""
    arrays = _mask_arrays(masks)
    if len(arrays) != len(model.blocks):
        raise ContractError(f"got masks for {len(arrays)} blocks, model has {len(model.blocks)}")
    n = arrays[0].shape[0]
    binary = all(np.array_equal(a, a.astype(bool)) for a in arrays)
    if binary:
        reduced = sum(int(a.sum()) * b.per_channel for a, b in zip(arrays, model.blocks))
        return float(Fraction(reduced + n * model.total_gate, n * model.total_original))
    reduced = sum(float(a.sum(dtype=np.float64)) * b.per_channel for a, b in zip(arrays, model.blocks))
    return (reduced / n + model.total_gate) / model.total_original


def flops_ratio(masks, model: FlopsModel) -> Tensor:
    """Differentiable FLOPs ratio; gradients flow into each mask tensor."""
    tensors = [m.mask if isinstance(m, GateMask) else m for m in masks]
    if len(tensors) != len(model.blocks):
        raise ContractError(f"got masks for {len(tensors)} blocks, model has {len(model.blocks)}")
    for t, b in zip(tensors, model.blocks):
        if t.ndim != 2 or t.shape[1] != b.width:
            raise ContractError(f"mask of shape {t.shape} does not match block width {b.width}")
    n = tensors[0].shape[0]
    value = flops_ratio_value(tensors, model)
    scales = [b.per_channel / (n * model.total_original) for b in model.blocks]

    def backward(g):
        for t, s in zip(tensors, scales):
            if t.requires_grad:
                t._accumulate(np.full(t.shape, float(g) * s, dtype=t.data.dtype))

    return Tensor._make(np.asarray(value), tensors, backward)


def budget_loss(ratio, config: BudgetConfig) -> Tensor:
    ratio = ratio if isinstance(ratio, Tensor) else Tensor(ratio)
    gap = ratio - config.t_d
    return gap * gap * config.lam


def gate_param_overhead(config: EncoderConfig) -> float:
    """Gate parameters relative to the same encoder without gates.

    The ungated encoder counts every convolution kernel plus one set of
    batch-norm affines; gates count both maps, their batch norm and the
    score bias.
    """
    w0 = config.stage_widths[0]
    base = 9 * config.in_channels * w0 + 2 * w0
    gates = 0
    for spec in config.block_specs():
        base += 9 * spec.c_in * spec.c_out + 9 * spec.c_out * spec.c_out + 4 * spec.c_out
        if spec.has_downsample:
            base += spec.c_in * spec.c_out + 2 * spec.c_out
        hidden = spec.c_in // REDUCTION_RATE
        gates += spec.c_in * hidden + 2 * hidden + hidden * spec.c_out + spec.c_out
    return gates / base
