"""Numeric kernel backend selection.

Two interchangeable backends exist: a Cython extension (_core) compiled at
install time and a pure numpy fallback (_py). The compiled one is preferred
when importable. Override with the CONVIMPACT_KERNELS environment variable:

    CONVIMPACT_KERNELS=c    require the compiled backend (ImportError if absent)
    CONVIMPACT_KERNELS=py   force the numpy fallback
    CONVIMPACT_KERNELS=auto prefer compiled, fall back silently (default)

Both backends implement the same flat-matrix API over C-contiguous float64
arrays; see _py.py for the reference semantics.
"""

import os

_choice = os.environ.get("CONVIMPACT_KERNELS", "auto").lower()

if _choice not in ("auto", "c", "py"):
    raise ValueError(
        f"CONVIMPACT_KERNELS must be one of auto/c/py, got {_choice!r}"
    )

if _choice == "py":
    from . import _py as _impl
elif _choice == "c":
    from . import _core as _impl  # type: ignore[no-redef]
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        from . import _py as _impl

BACKEND = _impl.BACKEND

matmul = _impl.matmul
matmul_grad_a = _impl.matmul_grad_a
matmul_grad_b = _impl.matmul_grad_b
add = _impl.add
sub = _impl.sub
mul = _impl.mul
scale = _impl.scale
sigmoid = _impl.sigmoid
sigmoid_grad = _impl.sigmoid_grad
tanh = _impl.tanh
tanh_grad = _impl.tanh_grad
softmax_rows = _impl.softmax_rows
softmax_rows_grad = _impl.softmax_rows_grad
weighted_mean = _impl.weighted_mean
weighted_mean_grad = _impl.weighted_mean_grad
mse = _impl.mse
mse_grad = _impl.mse_grad


def backend_name() -> str:
    """Name of the active backend: "c" or "py"."""
    return BACKEND
