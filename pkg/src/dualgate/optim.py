"""Training hyperparameters, the warmup-cosine schedule and LARS."""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import ConfigurationError, NumericError

TRAIN_MODES = ("dual", "dense", "gated")


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 512
    base_lr: float = 0.3
    warmup_epochs: int = 10
    weight_decay: float = 1e-4
    momentum: float = 0.9
    lars_trust: float = 0.001
    seed: int = 0
    eta_override: float | None = None
    t_d: float = 0.5
    checkpoint_every: int = 10
    mode: str = "dual"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigurationError("warmup_epochs must be smaller than epochs")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be at least 2")
        if self.base_lr <= 0 or self.weight_decay < 0 or self.lars_trust <= 0:
            raise ConfigurationError("learning rate and trust must be positive, weight decay non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.checkpoint_every < 1:
            raise ConfigurationError("checkpoint_every must be positive")
        if self.mode not in TRAIN_MODES:
            raise ConfigurationError(f"mode must be one of {TRAIN_MODES}")
        if not 0 < self.t_d <= 1:
            raise ConfigurationError("target budget t_d must lie in (0, 1]")
        if self.eta_override is not None and self.eta_override < 0:
            raise ConfigurationError("eta_override must be non-negative")


def lr_schedule(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warmup from 0 to base_lr, then half-cosine decay to 0."""
    if not 0 <= step <= total_steps:
        raise ConfigurationError(f"step {step} outside [0, {total_steps}]")
    warmup = int(round(total_steps * config.warmup_epochs / config.epochs))
    if step < warmup:
        return config.base_lr * step / warmup
    rest = total_steps - warmup
    progress = (step - warmup) / rest if rest else 1.0
    return config.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def trust_ratio(w: np.ndarray, update: np.ndarray, trust: float) -> float:
    w_norm = float(np.linalg.norm(w.astype(np.float64)))
    u_norm = float(np.linalg.norm(update.astype(np.float64)))
    if not (math.isfinite(w_norm) and math.isfinite(u_norm)):
        raise NumericError("non-finite norm in LARS update")
    if w_norm > 0 and u_norm > 0:
        return trust * w_norm / u_norm
    return 1.0


class LARS:
    """SGD with momentum and layer-wise trust scaling.

    ``scaled`` parameters get weight decay and the trust ratio; ``plain``
    ones take a bare momentum step.
    """

    def __init__(self, scaled: list, plain: list, config: TrainConfig):
        self.scaled = list(scaled)
        self.plain = list(plain)
        self.config = config
        self.momenta = {id(p): np.zeros_like(p.data) for p in self.scaled + self.plain}

    def step(self, lr: float) -> None:
        cfg = self.config
        for p in self.scaled:
            self._update(p, lr, cfg.weight_decay, True)
        for p in self.plain:
            self._update(p, lr, 0.0, False)

    def _update(self, p, lr: float, wd: float, scaled: bool) -> None:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        update = g + wd * p.data if wd else g
        local = trust_ratio(p.data, update, self.config.lars_trust) if scaled else 1.0
        m = self.momenta[id(p)]
        m *= self.config.momentum
        m += (local * lr) * update
        p.data -= m

    def zero_grad(self) -> None:
        for p in self.scaled + self.plain:
            p.grad = None

    def named_momenta(self, names: dict) -> dict:
        """Momentum buffers keyed by parameter name (``names`` maps id -> name)."""
        return {names[k]: v for k, v in self.momenta.items()}

    def load_momenta(self, buffers: dict, names: dict) -> None:
        for k in self.momenta:
            if names[k] in buffers:
                self.momenta[k] = buffers[names[k]].astype(self.momenta[k].dtype).copy()


def lars_update(params: list, grads: list, lr: float, config: TrainConfig,
                momenta: list | None = None, scaled: bool = True) -> tuple[list, list]:
    """Functional LARS step on plain arrays; returns (new params, new momenta)."""
    if len(params) != len(grads):
        raise ConfigurationError("params and grads differ in length")
    momenta = momenta or [np.zeros_like(p) for p in params]
    wd = config.weight_decay if scaled else 0.0
    new_p, new_m = [], []
    for w, g, m in zip(params, grads, momenta):
        if w.shape != g.shape or w.shape != m.shape:
            raise ConfigurationError("parameter, gradient and momentum shapes differ")
        update = g + wd * w
        local = trust_ratio(w, update, config.lars_trust) if scaled else 1.0
        m = config.momentum * m + local * lr * update
        new_p.append(w - m)
        new_m.append(m)
    return new_p, new_m
