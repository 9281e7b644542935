"""Weight-shared residual encoder with a dense path and a channel-gated path.

Both paths run the same convolution kernels. Each normalisation site keeps
one :class:`BatchNormState` per path, so the two paths accumulate their own
statistics. Only the gated path evaluates the per-block gates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError
from .gating import (
    GateMask,
    GateSamplerConfig,
    GatingParams,
    StraightThroughFreeze,
    gate_scores,
    gumbel_mask,
    hard_mask,
)
from .rng import stream_id
from .tensorcore import (
    BatchNormState,
    Tensor,
    batch_norm,
    conv2d,
    global_avg_pool,
    linear,
    parameter,
    relu,
)

PATHS = ("dense", "gated")
MODES = ("training", "inference")


@dataclass
class EncoderConfig:
    stage_widths: list = field(default_factory=lambda: [16, 32, 64])
    blocks_per_stage: list = field(default_factory=list)  # empty -> 2 per stage
    input_size: int = 32
    in_channels: int = 3
    proj_dim: int = 0  # 0 -> feature_dim
    expand_dim: int = 0  # 0 -> 4 * feature_dim
    gate_bias_init: float = 3.0
    gate_w2_std: float = 0.1
    init_seed: int = 0

    def __post_init__(self):
        self.stage_widths = [int(w) for w in self.stage_widths]
        self.blocks_per_stage = [int(b) for b in self.blocks_per_stage] or [2] * len(self.stage_widths)
        if not self.stage_widths or any(w <= 0 for w in self.stage_widths):
            raise ConfigurationError("stage widths must be positive")
        if any(b > a for a, b in zip(self.stage_widths[1:], self.stage_widths)):
            raise ConfigurationError("stage widths must be non-decreasing")
        if len(self.blocks_per_stage) != len(self.stage_widths) or min(self.blocks_per_stage) < 1:
            raise ConfigurationError("need one positive block count per stage")
        if self.input_size < 1:
            raise ConfigurationError("input_size must be positive")

    @property
    def feature_dim(self) -> int:
        return self.stage_widths[-1]

    @property
    def projection_dim(self) -> int:
        return self.proj_dim or self.feature_dim

    @property
    def expander_dim(self) -> int:
        return self.expand_dim or 4 * self.feature_dim

    def block_specs(self) -> list["BlockSpec"]:
        """Geometry of every gated residual block, in execution order."""
        specs = []
        c_in, size = self.stage_widths[0], self.input_size
        for stage, (width, count) in enumerate(zip(self.stage_widths, self.blocks_per_stage)):
            for b in range(count):
                stride = 2 if stage > 0 and b == 0 else 1
                out_size = (size + 2 - 3) // stride + 1
                specs.append(BlockSpec(c_in, width, stride, size, out_size))
                c_in, size = width, out_size
        return specs


@dataclass(frozen=True)
class BlockSpec:
    c_in: int
    c_out: int
    stride: int
    in_size: int
    out_size: int

    @property
    def has_downsample(self) -> bool:
        return self.stride != 1 or self.c_in != self.c_out


def _kaiming(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    fan_out = shape[0] * int(np.prod(shape[2:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_out), shape)


def _per_path_bn(channels: int, name: str) -> dict:
    return {p: BatchNormState(channels, name=f"{name}.{p}") for p in PATHS}


class BasicBlock:
    def __init__(self, spec: BlockSpec, rng: np.random.Generator, config: EncoderConfig, name: str):
        self.spec = spec
        self.name = name
        self.conv1 = parameter(_kaiming(rng, (spec.c_out, spec.c_in, 3, 3)), f"{name}.conv1")
        self.conv2 = parameter(_kaiming(rng, (spec.c_out, spec.c_out, 3, 3)), f"{name}.conv2")
        self.bn1 = _per_path_bn(spec.c_out, f"{name}.bn1")
        self.bn2 = _per_path_bn(spec.c_out, f"{name}.bn2")
        self.downsample = None
        self.bn_down = None
        if spec.has_downsample:
            self.downsample = parameter(_kaiming(rng, (spec.c_out, spec.c_in, 1, 1)), f"{name}.down")
            self.bn_down = _per_path_bn(spec.c_out, f"{name}.bn_down")
        self.gate = GatingParams(spec.c_in, spec.c_out, rng=rng, bias_init=config.gate_bias_init,
                                 w2_std=config.gate_w2_std, name=f"{name}.gate")

    def forward(self, x: Tensor, path: str, mask: GateMask | None) -> Tensor:
        out = conv2d(x, self.conv1, self.spec.stride, 1)
        out = relu(batch_norm(out, self.bn1[path]))
        if mask is not None:
            n, c = mask.mask.shape
            out = out * mask.mask.reshape(n, c, 1, 1)
        out = batch_norm(conv2d(out, self.conv2, 1, 1), self.bn2[path])
        shortcut = x
        if self.downsample is not None:
            shortcut = batch_norm(conv2d(x, self.downsample, self.spec.stride, 0), self.bn_down[path])
        return relu(out + shortcut)


class Encoder:
    """Residual CNN plus the path-private heads and the shared expander."""

    def __init__(self, config: EncoderConfig | None = None, sampler: GateSamplerConfig | None = None):
        self.config = config or EncoderConfig()
        self.sampler = sampler or GateSamplerConfig()
        cfg = self.config
        rng = np.random.default_rng(cfg.init_seed)
        w0 = cfg.stage_widths[0]
        self.stem = parameter(_kaiming(rng, (w0, cfg.in_channels, 3, 3)), "stem.conv")
        self.bn_stem = _per_path_bn(w0, "stem.bn")
        self.blocks = [BasicBlock(spec, rng, cfg, f"block{i}") for i, spec in enumerate(cfg.block_specs())]

        fdim, pdim, edim = cfg.feature_dim, cfg.projection_dim, cfg.expander_dim
        bound = 1.0 / np.sqrt(fdim)
        self.heads = {
            "dense": (parameter(rng.uniform(-bound, bound, (pdim, fdim)), "head_dense.weight"),
                      parameter(rng.uniform(-bound, bound, pdim), "head_dense.bias")),
            "gated": (parameter(rng.uniform(-bound, bound, (pdim, fdim)), "head_gated.weight"),
                      parameter(rng.uniform(-bound, bound, pdim), "head_gated.bias")),
        }
        if self.heads["dense"][0].shape != self.heads["gated"][0].shape:
            raise ConfigurationError("dense and gated heads must share their output width")
        b1, b2 = 1.0 / np.sqrt(pdim), 1.0 / np.sqrt(edim)
        self.exp_w1 = parameter(rng.uniform(-b1, b1, (edim, pdim)), "expander.fc1.weight")
        self.exp_b1 = parameter(rng.uniform(-b1, b1, edim), "expander.fc1.bias")
        self.exp_bn = _per_path_bn(edim, "expander.bn")
        self.exp_w2 = parameter(rng.uniform(-b2, b2, (edim, edim)), "expander.fc2.weight")
        self.exp_b2 = parameter(rng.uniform(-b2, b2, edim), "expander.fc2.bias")
        self.expander_bn = True

    # -- bookkeeping ---------------------------------------------------------
    def bn_states(self) -> dict:
        """Every normalisation state keyed by its name."""
        return {s.gamma.name.rsplit(".", 1)[0]: s for s in self._all_bn()}

    def _path_bn(self) -> list[BatchNormState]:
        out = list(self.bn_stem.values())
        for blk in self.blocks:
            out += list(blk.bn1.values()) + list(blk.bn2.values())
            if blk.bn_down is not None:
                out += list(blk.bn_down.values())
        return out + list(self.exp_bn.values())

    def _all_bn(self) -> list[BatchNormState]:
        return self._path_bn() + [blk.gate.bn for blk in self.blocks]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        params = [self.stem]
        for blk in self.blocks:
            params += [blk.conv1, blk.conv2]
            if blk.downsample is not None:
                params.append(blk.downsample)
            params += blk.gate.parameters()
        for w, b in self.heads.values():
            params += [w, b]
        params += [self.exp_w1, self.exp_b1, self.exp_w2, self.exp_b2]
        for bn in self._path_bn():
            params += bn.parameters()
        return [(p.name, p) for p in params]

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def param_groups(self) -> tuple[list[Tensor], list[Tensor]]:
        """(LARS-scaled weights, plain-SGD parameters).

        Conv kernels and linear weights get layer-wise scaling and weight
        decay; biases, batch-norm affines and every gate parameter do not.
        """
        lars, plain = [], []
        for name, p in self.named_parameters():
            is_weight = name.endswith((".conv", ".conv1", ".conv2", ".down", ".weight"))
            (lars if is_weight and ".gate." not in name else plain).append(p)
        return lars, plain

    def conv_kernels(self) -> list[Tensor]:
        kernels = [self.stem]
        for blk in self.blocks:
            kernels += [blk.conv1, blk.conv2] + ([blk.downsample] if blk.downsample is not None else [])
        return kernels

    def set_mode(self, mode: str) -> None:
        if mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}")
        for bn in self._all_bn():
            bn.training = mode == "training"

    # -- forward -------------------------------------------------------------
    def forward(self, x, path: str = "dense", mode: str = "inference", rng_stream: int | None = None,
                tau: float | None = None, mask_override: list | None = None,
                freeze: StraightThroughFreeze | None = None) -> tuple[Tensor, list[GateMask]]:
        if path not in PATHS:
            raise ContractError(f"path must be one of {PATHS}")
        if mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}")
        sampling = mode == "training" and path == "gated" and mask_override is None
        if mode == "inference" and (rng_stream is not None or tau is not None):
            raise ContractError("masks are not sampled at inference; drop rng_stream and tau")
        if sampling and (rng_stream is None or tau is None):
            raise ContractError("gated training pass needs rng_stream and tau")
        x = x if isinstance(x, Tensor) else Tensor(x)
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.in_channels or x.shape[2:] != (cfg.input_size, cfg.input_size):
            raise ContractError(
                f"expected N×{cfg.in_channels}×{cfg.input_size}×{cfg.input_size} input, got {x.shape}")
        self.set_mode(mode)

        h = relu(batch_norm(conv2d(x, self.stem, 1, 1), self.bn_stem[path]))
        masks: list[GateMask] = []
        for i, blk in enumerate(self.blocks):
            mask = None
            if path == "gated":
                if mask_override is not None:
                    forced = np.asarray(mask_override[i], dtype=h.data.dtype)
                    forced = np.broadcast_to(forced, (h.shape[0], blk.spec.c_out)).copy()
                    mask = GateMask(hard=forced, mask=Tensor(forced))
                else:
                    scores = gate_scores(global_avg_pool(h), blk.gate)
                    if sampling:
                        mask = gumbel_mask(scores, tau, stream_id(rng_stream, i), self.sampler,
                                           freeze=freeze, key=i)
                    else:
                        mask = hard_mask(scores)
                masks.append(mask)
            h = blk.forward(h, path, mask)
        return global_avg_pool(h), masks

    def project(self, features: Tensor, path: str) -> Tensor:
        if path not in PATHS:
            raise ContractError(f"path must be one of {PATHS}")
        w, b = self.heads[path]
        y = linear(features, w, b)
        y = linear(y, self.exp_w1, self.exp_b1)
        if self.expander_bn:
            y = batch_norm(y, self.exp_bn[path])
        y = relu(y)
        return linear(y, self.exp_w2, self.exp_b2)
