# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot loops: patch extraction for convolution and batch-norm sums.

Patch matrices are row-major with one row per output pixel (n, oh, ow)
and columns ordered (kh, kw, c); inputs are NHWC.
"""
import numpy as np
from cython cimport floating


def im2col(floating[:, :, :, ::1] x, int k, int s, int p):
    cdef Py_ssize_t N = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t Ho = (H + 2 * p - k) // s + 1, Wo = (W + 2 * p - k) // s + 1
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((N * Ho * Wo, k * k * C), dtype=dtype)
    cdef floating[:, ::1] o = out
    cdef Py_ssize_t n, oh, ow, kh, kw, ih, iw, c, row, col
    with nogil:
        for n in range(N):
            for oh in range(Ho):
                for ow in range(Wo):
                    row = (n * Ho + oh) * Wo + ow
                    col = 0
                    for kh in range(k):
                        ih = oh * s - p + kh
                        for kw in range(k):
                            iw = ow * s - p + kw
                            if ih < 0 or ih >= H or iw < 0 or iw >= W:
                                for c in range(C):
                                    o[row, col + c] = 0
                            else:
                                for c in range(C):
                                    o[row, col + c] = x[n, ih, iw, c]
                            col += C
    return out


def col2im(floating[:, ::1] cols, Py_ssize_t N, Py_ssize_t H, Py_ssize_t W, Py_ssize_t C,
           int k, int s, int p):
    cdef Py_ssize_t Ho = (H + 2 * p - k) // s + 1, Wo = (W + 2 * p - k) // s + 1
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((N, H, W, C), dtype=dtype)
    cdef floating[:, :, :, ::1] x = out
    cdef Py_ssize_t n, oh, ow, kh, kw, ih, iw, c, row, col
    with nogil:
        for n in range(N):
            for oh in range(Ho):
                for ow in range(Wo):
                    row = (n * Ho + oh) * Wo + ow
                    col = 0
                    for kh in range(k):
                        ih = oh * s - p + kh
                        for kw in range(k):
                            iw = ow * s - p + kw
                            if 0 <= ih < H and 0 <= iw < W:
                                for c in range(C):
                                    x[n, ih, iw, c] += cols[row, col + c]
                            col += C
    return out


def channel_sums(floating[:, :, ::1] x):
    """Per-channel sum and sum of squares of an (N, C, L) array, in float64."""
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], L = x.shape[2]
    s1 = np.zeros(C, dtype=np.float64)
    s2 = np.zeros(C, dtype=np.float64)
    cdef double[::1] a = s1, b = s2
    cdef Py_ssize_t n, c, i
    cdef double acc, acc2, v
    with nogil:
        for c in range(C):
            acc = 0
            acc2 = 0
            for n in range(N):
                for i in range(L):
                    v = x[n, c, i]
                    acc = acc + v
                    acc2 = acc2 + v * v
            a[c] = acc
            b[c] = acc2
    return s1, s2


def channel_dot(floating[:, :, ::1] g, floating[:, :, ::1] y):
    """Per-channel sum of g and of g*y over (N, C, L) arrays, in float64."""
    cdef Py_ssize_t N = g.shape[0], C = g.shape[1], L = g.shape[2]
    s1 = np.zeros(C, dtype=np.float64)
    s2 = np.zeros(C, dtype=np.float64)
    cdef double[::1] a = s1, b = s2
    cdef Py_ssize_t n, c, i
    cdef double acc, acc2, v
    with nogil:
        for c in range(C):
            acc = 0
            acc2 = 0
            for n in range(N):
                for i in range(L):
                    v = g[n, c, i]
                    acc = acc + v
                    acc2 = acc2 + v * y[n, c, i]
            a[c] = acc
            b[c] = acc2
    return s1, s2
