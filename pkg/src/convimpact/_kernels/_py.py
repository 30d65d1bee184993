"""Pure numpy implementations of the numeric kernels.

Every function takes and returns C-contiguous float64 matrices (2-D numpy
arrays). This module and the compiled twin in _core.pyx expose identical
signatures; convimpact._kernels picks one at import time.
"""

import numpy as np

BACKEND = "py"


def matmul(a, b):
    return a @ b


def matmul_grad_a(g, b):
    # dL/da for c = a @ b
    return g @ b.T


def matmul_grad_b(a, g):
    # dL/db for c = a @ b
    return a.T @ g


def add(a, b):
    return a + b


def sub(a, b):
    return a - b


def mul(a, b):
    return a * b


def scale(a, c):
    return a * c


def sigmoid(x):
    out = np.empty_like(x)
    np.negative(x, out=out)
    with np.errstate(over="ignore"):
        np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return out


def sigmoid_grad(y, g):
    return g * y * (1.0 - y)


def tanh(x):
    return np.tanh(x)


def tanh_grad(y, g):
    return g * (1.0 - y * y)


def softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def softmax_rows_grad(y, g):
    dot = (g * y).sum(axis=1, keepdims=True)
    return y * (g - dot)


def weighted_mean(r, w):
    wsum = float(w.sum())
    q = float((r * w).sum()) / wsum
    return q, wsum


def weighted_mean_grad(r, w, q, wsum, gq):
    gr = (gq / wsum) * w
    gw = (gq / wsum) * (r - q)
    return gr, gw


def mse(p, t):
    d = p - t
    return float((d * d).mean())


def mse_grad(p, t, gl):
    return (2.0 * gl / p.size) * (p - t)
