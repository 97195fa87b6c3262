# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled MLP kernels (hot path of every attack step).

Same contract as kernels_py: weights[l] is (out, in), hidden layers ReLU,
cache holds post-ReLU activations. Matrix products go through BLAS dgemm
(the library numpy itself uses) with the bias add and ReLU fused into one
pass, which cuts the per-call dispatch overhead that dominates at the
small layer sizes attack sweeps run at. Deterministic for a fixed build
and BLAS thread configuration.
"""

import numpy as np

cimport cython
from scipy.linalg.cython_blas cimport dgemm

NAME = "cython"


cdef void _dense_layer(double[:, ::1] a_in, double[:, ::1] w, double[::1] b,
                       double[:, ::1] out, bint relu) noexcept nogil:
    cdef int n = <int> a_in.shape[0]
    cdef int d_in = <int> a_in.shape[1]
    cdef int d_out = <int> w.shape[0]
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef char *trans = b"T"
    cdef char *no_trans = b"N"
    cdef Py_ssize_t i, j
    cdef double acc
    if n == 0 or d_out == 0:
        return
    # column-major view of these row-major buffers transposes them, so
    # out^T = (w^T)^T @ a^T computes out = a @ w^T
    dgemm(trans, no_trans, &d_out, &n, &d_in, &one, &w[0, 0], &d_in,
          &a_in[0, 0], &d_in, &zero, &out[0, 0], &d_out)
    for i in range(n):
        for j in range(d_out):
            acc = out[i, j] + b[j]
            if relu and acc < 0.0:
                acc = 0.0
            out[i, j] = acc


def forward_batch(list weights, list biases, double[:, ::1] x, bint want_cache=False):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t l
    cdef double[:, ::1] a = x
    acts = []
    out = None
    for l in range(n_layers):
        w_arr = weights[l]
        b_arr = biases[l]
        out = np.empty((n, w_arr.shape[0]), dtype=np.float64)
        _dense_layer(a, w_arr, b_arr, out, l < n_layers - 1)
        if l < n_layers - 1:
            a = out
            if want_cache:
                acts.append(out)
    if want_cache:
        return out, acts
    return out


cdef void _backprop_layer(double[:, ::1] g_in, double[:, ::1] w,
                          double[:, ::1] out) noexcept nogil:
    # out = g_in @ w  (g_in: (n, d_out), w: (d_out, d_in))
    cdef int n = <int> g_in.shape[0]
    cdef int d_out = <int> w.shape[0]
    cdef int d_in = <int> w.shape[1]
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef char *no_trans = b"N"
    if n == 0 or d_in == 0:
        return
    dgemm(no_trans, no_trans, &d_in, &n, &d_out, &one, &w[0, 0], &d_in,
          &g_in[0, 0], &d_out, &zero, &out[0, 0], &d_in)


cdef void _relu_mask(double[:, ::1] g, double[:, ::1] act) noexcept nogil:
    cdef Py_ssize_t n = g.shape[0]
    cdef Py_ssize_t m = g.shape[1]
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(m):
            if act[i, j] <= 0.0:
                g[i, j] = 0.0


def input_grad_batch(list weights, list acts, double[:, ::1] dl_ds):
    cdef Py_ssize_t n = dl_ds.shape[0]
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t l
    cdef double[:, ::1] g = dl_ds
    for l in range(n_layers - 1, 0, -1):
        w_arr = weights[l]
        out = np.empty((n, w_arr.shape[1]), dtype=np.float64)
        _backprop_layer(g, w_arr, out)
        _relu_mask(out, acts[l - 1])
        g = out
    w0 = weights[0]
    final = np.empty((n, w0.shape[1]), dtype=np.float64)
    _backprop_layer(g, w0, final)
    return final
