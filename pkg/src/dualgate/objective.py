"""VICReg objective: invariance, variance and covariance terms.

Each regulariser is applied to the two embedding batches independently;
the invariance term couples them. Column statistics use the unbiased
(n - 1) normalisation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError
from .tensorcore import Tensor, relu
from .tensorcore.tensor import as_tensor


@dataclass
class VICRegConfig:
    mu: float = 25.0     # variance weight
    nu: float = 25.0     # covariance weight
    eta: float = 1.0     # invariance weight
    gamma: float = 1.0   # target standard deviation
    eps: float = 1e-4
    invariance_reduction: str = "mean"  # "mean": MSE over all entries; "sum": per-row squared norm

    def __post_init__(self):
        if min(self.mu, self.nu, self.eta, self.gamma) < 0:
            raise ConfigurationError("VICReg weights and target must be non-negative")
        if self.eps <= 0:
            raise ConfigurationError("VICReg eps must be positive")
        if self.invariance_reduction not in ("mean", "sum"):
            raise ConfigurationError("invariance_reduction must be 'mean' or 'sum'")


# Weights as printed for the dual-gating method, and the canonical VICReg
# weighting (25 on invariance and variance, 1 on covariance).
PRESETS = {
    "dual_gating": VICRegConfig(mu=25.0, nu=25.0, eta=1.0),
    "vicreg": VICRegConfig(mu=25.0, nu=1.0, eta=25.0),
}


@dataclass
class VICRegTerms:
    """Weighted contributions; ``total`` is their sum."""

    total: Tensor
    invariance: Tensor
    variance: Tensor
    covariance: Tensor

    def as_floats(self) -> dict:
        return {k: getattr(self, k).item() for k in ("total", "invariance", "variance", "covariance")}


def _check_batch(z: Tensor) -> None:
    if z.ndim != 2:
        raise ContractError("embedding batch must be an n×d matrix")
    if z.shape[0] < 2:
        raise ContractError("variance and covariance need at least 2 embeddings")


def _centered(z: Tensor) -> Tensor:
    return z - z.mean(axis=0, keepdims=True)


def variance_term(z, config: VICRegConfig | None = None) -> Tensor:
    config = config or VICRegConfig()
    z = as_tensor(z)
    _check_batch(z)
    zc = _centered(z)
    var = (zc * zc).sum(axis=0) * (1.0 / (z.shape[0] - 1))
    std = (var + config.eps).sqrt()
    return relu(config.gamma - std).mean()


def covariance_term(z) -> Tensor:
    z = as_tensor(z)
    _check_batch(z)
    n, d = z.shape
    zc = _centered(z)
    cov = (zc.T @ zc) * (1.0 / (n - 1))
    off_diag = 1.0 - np.eye(d)
    return (cov * cov * off_diag).sum() * (1.0 / d)


def invariance_term(z1, z2, reduction: str = "sum") -> Tensor:
    """Mean over rows of ||z1_i - z2_i||^2; ``reduction="mean"`` also averages over dimensions."""
    z1, z2 = as_tensor(z1), as_tensor(z2)
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ContractError(f"embedding batches differ in shape: {z1.shape} vs {z2.shape}")
    if reduction not in ("mean", "sum"):
        raise ConfigurationError("reduction must be 'mean' or 'sum'")
    diff = z1 - z2
    scale = 1.0 / (z1.shape[0] * (z1.shape[1] if reduction == "mean" else 1))
    return (diff * diff).sum() * scale


def vicreg_loss(z1, z2, config: VICRegConfig | None = None) -> VICRegTerms:
    config = config or VICRegConfig()
    z1, z2 = as_tensor(z1), as_tensor(z2)
    if z1.shape != z2.shape:
        raise ContractError(f"embedding batches differ in shape: {z1.shape} vs {z2.shape}")
    inv = invariance_term(z1, z2, config.invariance_reduction) * config.eta
    var = (variance_term(z1, config) + variance_term(z2, config)) * config.mu
    cov = (covariance_term(z1) + covariance_term(z2)) * config.nu
    return VICRegTerms(total=inv + var + cov, invariance=inv, variance=var, covariance=cov)
