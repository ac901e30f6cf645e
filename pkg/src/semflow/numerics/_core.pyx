# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot kernels.

Mirrors `semflow.numerics._kernels_np` function for function; the dispatch in
`semflow.numerics.kernels` picks whichever backend is available. These loops
fuse the masked softmax, modulated RMSNorm, GELU, and Adam inner loops that
dominate training time, avoiding the temporaries the NumPy versions allocate.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh, INFINITY

cnp.import_array()

NAME = "compiled"

cdef double GELU_C = sqrt(2.0 / 3.141592653589793)


def masked_softmax_fwd(double[:, :, ::1] scores, unsigned char[:, ::1] mask):
    cdef Py_ssize_t R = scores.shape[0]
    cdef Py_ssize_t Lq = scores.shape[1]
    cdef Py_ssize_t Lk = scores.shape[2]
    out_arr = np.empty((R, Lq, Lk), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t r, i, j
    cdef double m, s, e
    with nogil:
        for r in range(R):
            for i in range(Lq):
                m = -INFINITY
                for j in range(Lk):
                    if mask[i, j] and scores[r, i, j] > m:
                        m = scores[r, i, j]
                s = 0.0
                for j in range(Lk):
                    if mask[i, j]:
                        e = exp(scores[r, i, j] - m)
                        out[r, i, j] = e
                        s += e
                    else:
                        out[r, i, j] = 0.0
                for j in range(Lk):
                    out[r, i, j] /= s
    return out_arr


def masked_softmax_bwd(double[:, :, ::1] weights, double[:, :, ::1] dout):
    cdef Py_ssize_t R = weights.shape[0]
    cdef Py_ssize_t Lq = weights.shape[1]
    cdef Py_ssize_t Lk = weights.shape[2]
    ds_arr = np.empty((R, Lq, Lk), dtype=np.float64)
    cdef double[:, :, ::1] ds = ds_arr
    cdef Py_ssize_t r, i, j
    cdef double inner
    with nogil:
        for r in range(R):
            for i in range(Lq):
                inner = 0.0
                for j in range(Lk):
                    inner += dout[r, i, j] * weights[r, i, j]
                for j in range(Lk):
                    ds[r, i, j] = weights[r, i, j] * (dout[r, i, j] - inner)
    return ds_arr


def rms_mod_fwd(double[:, ::1] x, double[:, ::1] a, double eps):
    cdef Py_ssize_t R = x.shape[0]
    cdef Py_ssize_t C = x.shape[1]
    y_arr = np.empty((R, C), dtype=np.float64)
    rstd_arr = np.empty(R, dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[::1] rstd = rstd_arr
    cdef Py_ssize_t r, c
    cdef double ms, rs
    with nogil:
        for r in range(R):
            ms = 0.0
            for c in range(C):
                ms += x[r, c] * x[r, c]
            rs = 1.0 / sqrt(ms / C + eps)
            rstd[r] = rs
            for c in range(C):
                y[r, c] = a[r, c] * x[r, c] * rs
    return y_arr, rstd_arr


def rms_mod_bwd(double[:, ::1] x, double[:, ::1] a, double[::1] rstd, double[:, ::1] dy):
    cdef Py_ssize_t R = x.shape[0]
    cdef Py_ssize_t C = x.shape[1]
    dx_arr = np.empty((R, C), dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef Py_ssize_t r, c
    cdef double inner, rs, coef
    with nogil:
        for r in range(R):
            rs = rstd[r]
            inner = 0.0
            for c in range(C):
                inner += a[r, c] * dy[r, c] * x[r, c]
            coef = rs * rs * rs * inner / C
            for c in range(C):
                dx[r, c] = a[r, c] * dy[r, c] * rs - x[r, c] * coef
    return dx_arr


def gelu_fwd(double[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    y_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] y = y_arr
    cdef Py_ssize_t i
    cdef double u
    with nogil:
        for i in range(n):
            u = GELU_C * (x[i] + 0.044715 * x[i] * x[i] * x[i])
            y[i] = 0.5 * x[i] * (1.0 + tanh(u))
    return y_arr


def gelu_bwd(double[::1] x, double[::1] dy):
    cdef Py_ssize_t n = x.shape[0]
    dx_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] dx = dx_arr
    cdef Py_ssize_t i
    cdef double u, t, du
    with nogil:
        for i in range(n):
            u = GELU_C * (x[i] + 0.044715 * x[i] * x[i] * x[i])
            t = tanh(u)
            du = GELU_C * (1.0 + 3.0 * 0.044715 * x[i] * x[i])
            dx[i] = dy[i] * (0.5 * (1.0 + t) + 0.5 * x[i] * (1.0 - t * t) * du)
    return dx_arr


def adam_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                int t, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t n = p.shape[0]
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef Py_ssize_t i
    cdef double mhat, vhat
    with nogil:
        for i in range(n):
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
            mhat = m[i] / bc1
            vhat = v[i] / bc2
            p[i] -= lr * mhat / (sqrt(vhat) + eps)
