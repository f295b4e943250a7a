# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled dense MLP kernels; mirrors `numpy_backend` exactly.

Plain-loop float64 GEMMs beat BLAS-backed numpy on the tiny per-utterance
matrices that dominate a training round, at the cost of losing on the large
stacked evaluation batches (see benchmarks/bench_kernels.py).
"""

import numpy as np

cimport cython


cdef void _gemm_bias(double[:, ::1] a, double[:, ::1] w, double[::1] b,
                     double[:, ::1] out) noexcept:
    # out = a @ w + b
    cdef Py_ssize_t t, k, j
    cdef Py_ssize_t T = a.shape[0], K = a.shape[1], J = w.shape[1]
    cdef double av
    for t in range(T):
        for j in range(J):
            out[t, j] = b[j]
        for k in range(K):
            av = a[t, k]
            for j in range(J):
                out[t, j] += av * w[k, j]


cdef void _gemm_at_b(double[:, ::1] a, double[:, ::1] g, double[:, ::1] out) noexcept:
    # out = a.T @ g
    cdef Py_ssize_t t, i, j
    cdef Py_ssize_t T = a.shape[0], I = a.shape[1], J = g.shape[1]
    cdef double av
    for i in range(I):
        for j in range(J):
            out[i, j] = 0.0
    for t in range(T):
        for i in range(I):
            av = a[t, i]
            for j in range(J):
                out[i, j] += av * g[t, j]


cdef void _gemm_a_bt(double[:, ::1] g, double[:, ::1] w, double[:, ::1] out) noexcept:
    # out = g @ w.T
    cdef Py_ssize_t t, i, j
    cdef Py_ssize_t T = g.shape[0], I = w.shape[0], J = w.shape[1]
    cdef double s
    for t in range(T):
        for i in range(I):
            s = 0.0
            for j in range(J):
                s += g[t, j] * w[i, j]
            out[t, i] = s


cdef void _col_sum(double[:, ::1] g, double[::1] out) noexcept:
    cdef Py_ssize_t t, j
    cdef Py_ssize_t T = g.shape[0], J = g.shape[1]
    for j in range(J):
        out[j] = 0.0
    for t in range(T):
        for j in range(J):
            out[j] += g[t, j]


cdef void _relu(double[:, ::1] z, double[:, ::1] out) noexcept:
    cdef Py_ssize_t t, j
    cdef Py_ssize_t T = z.shape[0], J = z.shape[1]
    for t in range(T):
        for j in range(J):
            out[t, j] = z[t, j] if z[t, j] > 0.0 else 0.0


cdef void _mask_mul(double[:, ::1] d, double[:, ::1] z, double[:, ::1] out) noexcept:
    # out = d * (z > 0)
    cdef Py_ssize_t t, j
    cdef Py_ssize_t T = d.shape[0], J = d.shape[1]
    for t in range(T):
        for j in range(J):
            out[t, j] = d[t, j] if z[t, j] > 0.0 else 0.0


def forward(x, weights, biases, keep_preacts):
    preacts = [] if keep_preacts else None
    hiddens = []
    cdef Py_ssize_t i, n = len(weights) - 1
    a = x
    for i in range(n):
        z = np.empty((a.shape[0], weights[i].shape[1]), dtype=np.float64)
        _gemm_bias(a, weights[i], biases[i], z)
        h = np.empty_like(z)
        _relu(z, h)
        if keep_preacts:
            preacts.append(z)
        hiddens.append(h)
        a = h
    out = np.empty((a.shape[0], weights[n].shape[1]), dtype=np.float64)
    _gemm_bias(a, weights[n], biases[n], out)
    return preacts, hiddens, out


def logits(x, weights, biases):
    cdef Py_ssize_t i, n = len(weights) - 1
    a = x
    for i in range(n):
        z = np.empty((a.shape[0], weights[i].shape[1]), dtype=np.float64)
        _gemm_bias(a, weights[i], biases[i], z)
        _relu(z, z)
        a = z
    out = np.empty((a.shape[0], weights[n].shape[1]), dtype=np.float64)
    _gemm_bias(a, weights[n], biases[n], out)
    return out


def backward(x, weights, biases, hiddens, preacts, dlogits, start_layer):
    cdef Py_ssize_t i, n = len(weights) - 1
    dws = [None] * (n + 1)
    dbs = [None] * (n + 1)

    inp_top = hiddens[n - 1] if n > 0 else x
    dw = np.empty((inp_top.shape[1], dlogits.shape[1]), dtype=np.float64)
    _gemm_at_b(inp_top, dlogits, dw)
    db = np.empty(dlogits.shape[1], dtype=np.float64)
    _col_sum(dlogits, db)
    dws[n] = dw
    dbs[n] = db
    if start_layer >= n:
        return dws, dbs

    delta = dlogits
    for i in range(n - 1, start_layer - 1, -1):
        d_out = np.empty((delta.shape[0], weights[i + 1].shape[0]), dtype=np.float64)
        _gemm_a_bt(delta, weights[i + 1], d_out)
        inp = hiddens[i - 1] if i > 0 else x
        if preacts is not None:
            z = preacts[i]
        else:
            z = np.empty((inp.shape[0], weights[i].shape[1]), dtype=np.float64)
            _gemm_bias(inp, weights[i], biases[i], z)
        new_delta = np.empty_like(d_out)
        _mask_mul(d_out, z, new_delta)
        delta = new_delta
        dw = np.empty((inp.shape[1], delta.shape[1]), dtype=np.float64)
        _gemm_at_b(inp, delta, dw)
        db = np.empty(delta.shape[1], dtype=np.float64)
        _col_sum(delta, db)
        dws[i] = dw
        dbs[i] = db
    return dws, dbs
