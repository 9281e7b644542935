"""Per-block channel gates: relevance scores, stochastic and hard masks.

Scores follow a squeeze-and-excitation layout on the pooled block input:
two 1x1 convolutions (expressed as matrix products on the N×C context)
with batch norm and ReLU between them. Training masks come from a binary
Gumbel-sigmoid sampler with a straight-through estimator.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError
from .rng import generator
from .tensorcore import BatchNormState, Tensor, batch_norm, linear, parameter, relu
from .tensorcore.tensor import add, straight_through

REDUCTION_RATE = 4


@dataclass
class GateSamplerConfig:
    tau_start: float = 5.0
    tau_end: float = 0.1
    anneal_fraction: float = 0.8
    hard_forward: bool = True

    def __post_init__(self):
        if not self.tau_start >= self.tau_end > 0:
            raise ConfigurationError("need tau_start >= tau_end > 0")
        if not 0 < self.anneal_fraction <= 1:
            raise ConfigurationError("anneal_fraction must lie in (0, 1]")


def temperature(progress: float, config: GateSamplerConfig) -> float:
    """Linear anneal from tau_start to tau_end, then constant.

    ``progress`` is the fraction of training completed, in [0, 1].
    """
    frac = min(max(progress / config.anneal_fraction, 0.0), 1.0)
    return config.tau_start + (config.tau_end - config.tau_start) * frac


class GatingParams:
    """Gate network for one residual block.

    w1 maps the C_prev-wide context to C_prev/r hidden units, w2 maps them
    to one score per gated channel. A per-channel bias on the scores sets
    the initial opening probability.
    """

    def __init__(self, c_prev: int, c_block: int, r: int = REDUCTION_RATE,
                 rng: np.random.Generator | None = None, bias_init: float = 3.0,
                 w2_std: float = 0.1, name: str = "gate"):
        if c_prev % r:
            raise ConfigurationError(f"context width {c_prev} not divisible by reduction rate {r}")
        rng = rng or np.random.default_rng(0)
        hidden = c_prev // r
        self.r = r
        self.c_prev = c_prev
        self.c_block = c_block
        self.w1 = parameter(rng.normal(0.0, np.sqrt(2.0 / c_prev), (hidden, c_prev, 1, 1)), f"{name}.w1")
        self.bn = BatchNormState(hidden, name=f"{name}.bn")
        self.w2 = parameter(rng.normal(0.0, w2_std, (c_block, hidden, 1, 1)), f"{name}.w2")
        self.bias = parameter(np.full(c_block, bias_init), f"{name}.bias")

    @property
    def hidden(self) -> int:
        return self.c_prev // self.r

    def parameters(self) -> list[Tensor]:
        return [self.w1, *self.bn.parameters(), self.w2, self.bias]

    def num_params(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def macs(self) -> int:
        """Multiply-accumulates of the two 1x1 maps on the pooled context."""
        return self.c_prev * self.hidden + self.hidden * self.c_block


def gate_scores(context: Tensor, params: GatingParams) -> Tensor:
    if context.ndim != 2 or context.shape[1] != params.c_prev:
        raise ConfigurationError(
            f"context of shape {context.shape} does not match gate width {params.c_prev}")
    h = linear(context, params.w1.reshape(params.hidden, params.c_prev))
    h = relu(batch_norm(h, params.bn))
    return linear(h, params.w2.reshape(params.c_block, params.hidden), params.bias)


@dataclass
class GateMask:
    """Binary channel mask for a batch, plus the relaxation used for gradients."""

    hard: np.ndarray
    mask: Tensor
    soft: Tensor | None = None

    @property
    def active_fraction(self) -> float:
        return float(self.hard.mean())


def logistic_noise(shape: tuple, rng_stream: int) -> np.ndarray:
    rng = generator(0, rng_stream)
    u = rng.random(shape)
    bad = (u <= 0.0) | (u >= 1.0)
    while bad.any():
        u[bad] = rng.random(int(bad.sum()))
        bad = (u <= 0.0) | (u >= 1.0)
    return np.log(u) - np.log1p(-u)


@dataclass
class StraightThroughFreeze:
    """Pin the hard-minus-soft offset of each sampled mask.

    With offsets frozen the gated forward becomes a smooth function whose
    derivative is exactly the straight-through gradient, so it can be
    checked by finite differences.
    """

    offsets: dict = field(default_factory=dict)

    def apply(self, key, hard: np.ndarray, soft: Tensor) -> Tensor:
        if key not in self.offsets:
            self.offsets[key] = hard.astype(np.float64) - soft.data.astype(np.float64)
        return add(soft, self.offsets[key])


def gumbel_mask(scores: Tensor, tau: float, rng_stream: int, config: GateSamplerConfig,
                freeze: StraightThroughFreeze | None = None, key=None) -> GateMask:
    if tau <= 0:
        raise ContractError("temperature must be positive")
    noise = logistic_noise(scores.shape, rng_stream).astype(scores.data.dtype)
    soft = ((scores + noise) * (1.0 / tau)).sigmoid()
    # same event as soft > 0.5, without float rounding at the midpoint
    hard = (scores.data + noise > 0).astype(scores.data.dtype)
    if not config.hard_forward:
        return GateMask(hard=hard, mask=soft, soft=soft)
    if freeze is not None:
        mask = freeze.apply(key, hard, soft)
    else:
        mask = straight_through(hard, soft)
    return GateMask(hard=hard, mask=mask, soft=soft)


def hard_mask(scores: Tensor) -> GateMask:
    hard = (scores.data > 0).astype(scores.data.dtype)
    return GateMask(hard=hard, mask=Tensor(hard))
