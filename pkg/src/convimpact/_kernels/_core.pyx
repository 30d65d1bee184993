# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of _py.py: same signatures over C-contiguous float64 arrays.

Plain loops beat numpy dispatch on the small matrices this workload sees
(conversation lengths of 5-40 and embedding widths of 16-768), which is
where training spends nearly all of its time.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as c_exp, tanh as c_tanh

cnp.import_array()

BACKEND = "c"

# typed loops beat BLAS dispatch only while matrices stay small; above this
# flop count (m*k*n) the products go to numpy's BLAS instead
DEF GEMM_LOOP_LIMIT = 4096


def matmul(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    if m * k * n > GEMM_LOOP_LIMIT:
        return np.matmul(np.asarray(a), np.asarray(b))
    out = np.zeros((m, n))
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, j, p
    cdef double aik
    for i in range(m):
        for p in range(k):
            aik = a[i, p]
            for j in range(n):
                c[i, j] += aik * b[p, j]
    return out


def matmul_grad_a(double[:, ::1] g, double[:, ::1] b):
    # g @ b.T
    cdef Py_ssize_t m = g.shape[0], n = g.shape[1], k = b.shape[0]
    if m * k * n > GEMM_LOOP_LIMIT:
        return np.matmul(np.asarray(g), np.asarray(b).T)
    out = np.empty((m, k))
    cdef double[:, ::1] ga = out
    cdef Py_ssize_t i, j, p
    cdef double acc
    for i in range(m):
        for p in range(k):
            acc = 0.0
            for j in range(n):
                acc += g[i, j] * b[p, j]
            ga[i, p] = acc
    return out


def matmul_grad_b(double[:, ::1] a, double[:, ::1] g):
    # a.T @ g
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = g.shape[1]
    if m * k * n > GEMM_LOOP_LIMIT:
        return np.matmul(np.asarray(a).T, np.asarray(g))
    out = np.zeros((k, n))
    cdef double[:, ::1] gb = out
    cdef Py_ssize_t i, j, p
    cdef double aip
    for i in range(m):
        for p in range(k):
            aip = a[i, p]
            for j in range(n):
                gb[p, j] += aip * g[i, j]
    return out


def add(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1]
    out = np.empty((m, n))
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            c[i, j] = a[i, j] + b[i, j]
    return out


def sub(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1]
    out = np.empty((m, n))
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            c[i, j] = a[i, j] - b[i, j]
    return out


def mul(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1]
    out = np.empty((m, n))
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            c[i, j] = a[i, j] * b[i, j]
    return out


def scale(double[:, ::1] a, double c):
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1]
    out = np.empty((m, n))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            o[i, j] = a[i, j] * c
    return out


def sigmoid(double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    out = np.empty((m, n))
    cdef double[:, ::1] y = out
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            y[i, j] = 1.0 / (1.0 + c_exp(-x[i, j]))
    return out


def sigmoid_grad(double[:, ::1] y, double[:, ::1] g):
    cdef Py_ssize_t m = y.shape[0], n = y.shape[1]
    out = np.empty((m, n))
    cdef double[:, ::1] gx = out
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            gx[i, j] = g[i, j] * y[i, j] * (1.0 - y[i, j])
    return out


def tanh(double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    out = np.empty((m, n))
    cdef double[:, ::1] y = out
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            y[i, j] = c_tanh(x[i, j])
    return out


def tanh_grad(double[:, ::1] y, double[:, ::1] g):
    cdef Py_ssize_t m = y.shape[0], n = y.shape[1]
    out = np.empty((m, n))
    cdef double[:, ::1] gx = out
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            gx[i, j] = g[i, j] * (1.0 - y[i, j] * y[i, j])
    return out


def softmax_rows(double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    out = np.empty((m, n))
    cdef double[:, ::1] y = out
    cdef Py_ssize_t i, j
    cdef double row_max, total
    for i in range(m):
        row_max = x[i, 0]
        for j in range(1, n):
            if x[i, j] > row_max:
                row_max = x[i, j]
        total = 0.0
        for j in range(n):
            y[i, j] = c_exp(x[i, j] - row_max)
            total += y[i, j]
        for j in range(n):
            y[i, j] /= total
    return out


def softmax_rows_grad(double[:, ::1] y, double[:, ::1] g):
    cdef Py_ssize_t m = y.shape[0], n = y.shape[1]
    out = np.empty((m, n))
    cdef double[:, ::1] gx = out
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(m):
        dot = 0.0
        for j in range(n):
            dot += g[i, j] * y[i, j]
        for j in range(n):
            gx[i, j] = y[i, j] * (g[i, j] - dot)
    return out


def weighted_mean(double[:, ::1] r, double[:, ::1] w):
    cdef Py_ssize_t n = r.shape[0]
    cdef double num = 0.0, den = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        num += r[i, 0] * w[i, 0]
        den += w[i, 0]
    return num / den, den


def weighted_mean_grad(double[:, ::1] r, double[:, ::1] w,
                       double q, double wsum, double gq):
    cdef Py_ssize_t n = r.shape[0]
    gr_arr = np.empty((n, 1))
    gw_arr = np.empty((n, 1))
    cdef double[:, ::1] gr = gr_arr
    cdef double[:, ::1] gw = gw_arr
    cdef double inv = gq / wsum
    cdef Py_ssize_t i
    for i in range(n):
        gr[i, 0] = inv * w[i, 0]
        gw[i, 0] = inv * (r[i, 0] - q)
    return gr_arr, gw_arr


def mse(double[:, ::1] p, double[:, ::1] t):
    cdef Py_ssize_t m = p.shape[0], n = p.shape[1]
    cdef double acc = 0.0, d
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            d = p[i, j] - t[i, j]
            acc += d * d
    return acc / (m * n)


def mse_grad(double[:, ::1] p, double[:, ::1] t, double gl):
    cdef Py_ssize_t m = p.shape[0], n = p.shape[1]
    out = np.empty((m, n))
    cdef double[:, ::1] gp = out
    cdef double c = 2.0 * gl / (m * n)
    cdef Py_ssize_t i, j
    for i in range(m):
        for j in range(n):
            gp[i, j] = c * (p[i, j] - t[i, j])
    return out
