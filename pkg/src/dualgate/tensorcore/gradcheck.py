"""Finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigurationError, ContractError, NumericError
from .tensor import Tensor, no_grad, precision


def gradient_check(fn: Callable[[], Tensor], point: Sequence[Tensor], step: float = 1e-5,
                   dtype=np.float64, max_coords: int | None = None,
                   rng: np.random.Generator | None = None, floor: float = 1e-3) -> float:
    """Worst per-coordinate relative error of ``fn``'s reverse-mode gradient.

    ``fn`` closes over the tensors in ``point`` and returns a scalar. The
    analytic gradient is taken with the point held in ``dtype``; central
    differences are always evaluated in float64, so a float32 run measures
    how far the 32-bit backward pass strays from the exact derivative.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, s)``
    where ``s`` is ``floor`` times the largest finite-difference magnitude;
    coordinates with negligible gradient are thus judged on an absolute
    scale. ``max_coords`` limits the check to that many randomly chosen
    coordinates.
    """
    if not step > 0:
        raise ConfigurationError("finite-difference step must be positive")
    rng = rng or np.random.default_rng(0)
    originals = [p.data for p in point]
    try:
        for p, orig in zip(point, originals):
            p.data = orig.astype(dtype)
            p.grad = None
        with precision(dtype):
            out = fn()
            if out.data.size != 1:
                raise ContractError("gradient_check needs a scalar-valued function")
            out.backward()
        analytic = [np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64) for p in point]

        coords = [(i, j) for i, p in enumerate(point) for j in range(p.data.size)]
        if max_coords is not None and len(coords) > max_coords:
            pick = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[k] for k in sorted(pick)]

        for p, orig in zip(point, originals):
            p.data = orig.astype(np.float64)
        a_vals, n_vals = [], []
        with precision(np.float64), no_grad():
            for i, j in coords:
                flat = point[i].data.reshape(-1)
                base = flat[j]
                flat[j] = base + step
                f_plus = fn().item()
                flat[j] = base - step
                f_minus = fn().item()
                flat[j] = base
                quotient = (f_plus - f_minus) / (2 * step)
                if not np.isfinite(quotient):
                    raise NumericError("non-finite difference quotient")
                a_vals.append(analytic[i].reshape(-1)[j])
                n_vals.append(quotient)
    finally:
        for p, orig in zip(point, originals):
            p.data = orig
            p.grad = None

    a = np.asarray(a_vals)
    n = np.asarray(n_vals)
    if a.size == 0:
        return 0.0
    scale = max(floor * np.abs(n).max(), np.finfo(np.float64).tiny)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), scale)
    return float(np.max(np.abs(a - n) / denom))
