"""Select the compiled kernels, falling back to numpy when unavailable.

Set ``DUALGATE_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

import numpy as np

from . import _fallback as _impl

BACKEND = "python"

if os.environ.get("DUALGATE_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # noqa: F811
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"


def im2col(x: np.ndarray, k: int, s: int, p: int) -> np.ndarray:
    """Unfold NHWC ``x`` into an ``(N*Ho*Wo, k*k*C)`` patch matrix."""
    return _impl.im2col(np.ascontiguousarray(x), k, s, p)


def col2im(cols: np.ndarray, shape: tuple, k: int, s: int, p: int) -> np.ndarray:
    """Scatter-add a patch matrix back onto an NHWC array of ``shape``."""
    n, h, w, c = shape
    return _impl.col2im(np.ascontiguousarray(cols), n, h, w, c, k, s, p)


def channel_sums(x: np.ndarray):
    """Per-channel (sum, sum of squares) of an (N, C, L) array."""
    return _impl.channel_sums(np.ascontiguousarray(x))


def channel_dot(g: np.ndarray, y: np.ndarray):
    """Per-channel (sum g, sum g*y) of two (N, C, L) arrays."""
    return _impl.channel_dot(np.ascontiguousarray(g), np.ascontiguousarray(y))
