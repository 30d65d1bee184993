"""Shared test helpers: finite-difference oracle and tiny fixtures."""

import numpy as np
import pytest


def central_difference_grads(f, arrays, step=1e-5):
    """Numerical gradients of f(arrays) -> float via central differences.

    arrays: dict name -> ndarray. Independent of the autodiff engine; this
    is the oracle the analytic gradients are checked against.
    """
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f(arrays)
            flat[i] = orig - step
            down = f(arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-5):
    """Worst-case elementwise |a - n| / max(floor, |a|, |n|)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(floor, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def randomize_tensors(params, rng, scale=0.5):
    """Fill every model tensor with random values (heads included)."""
    for name, arr in params.tensors.items():
        params.tensors[name] = rng.normal(scale=scale, size=arr.shape)
    return params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
