"""Pure-numpy versions of the compiled kernels, same signatures and layout."""
import numpy as np


def im2col(x: np.ndarray, k: int, s: int, p: int) -> np.ndarray:
    n, h, w, c = x.shape
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
    cols = np.empty((n, ho, wo, k, k, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j] = xp[:, i:i + s * ho:s, j:j + s * wo:s]
    return cols.reshape(n * ho * wo, k * k * c)


def col2im(cols: np.ndarray, n: int, h: int, w: int, c: int, k: int, s: int, p: int) -> np.ndarray:
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    blocks = cols.reshape(n, ho, wo, k, k, c)
    xp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, i:i + s * ho:s, j:j + s * wo:s] += blocks[:, :, :, i, j]
    if p:
        return np.ascontiguousarray(xp[:, p:-p, p:-p])
    return xp


def channel_sums(x: np.ndarray):
    return x.sum(axis=(0, 2), dtype=np.float64), np.einsum("ncl,ncl->c", x, x, dtype=np.float64)


def channel_dot(g: np.ndarray, y: np.ndarray):
    return g.sum(axis=(0, 2), dtype=np.float64), np.einsum("ncl,ncl->c", g, y, dtype=np.float64)
