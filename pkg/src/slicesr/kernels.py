"""Backend selection for the line kernels.

The compiled extension is used when it imports; otherwise the numpy fallback
takes over. Set ``SLICESR_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("SLICESR_PURE_PYTHON"):
    _backend = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _backend
    except ImportError:
        _backend = _kernels_py
        BACKEND = "python"
    else:
        BACKEND = "cython"


def gather(lines, index, weight, backend=None):
    """Weighted gather along the last axis of a (lines, samples) array.

    Parameters
    ----------
    lines : ndarray, shape (L, N)
    index : ndarray of intp, shape (M, K)
        Source sample for each of the ``K`` taps of output sample ``m``.
    weight : ndarray, shape (M, K)

    Returns
    -------
    ndarray, shape (L, M)
    """
    impl = _resolve(backend)
    return impl.gather(
        np.ascontiguousarray(lines, dtype=np.float64),
        np.ascontiguousarray(index, dtype=np.intp),
        np.ascontiguousarray(weight, dtype=np.float64),
    )


def tridiag_solve(rhs, inv_pivot, upper, backend=None):
    """Per-line tridiagonal solve with a precomputed factorization."""
    impl = _resolve(backend)
    return impl.tridiag_solve(
        np.ascontiguousarray(rhs, dtype=np.float64),
        np.ascontiguousarray(inv_pivot, dtype=np.float64),
        np.ascontiguousarray(upper, dtype=np.float64),
    )


def _resolve(backend):
    if backend is None:
        return _backend
    if backend == "python":
        return _kernels_py
    if backend == "cython":
        if BACKEND != "cython":
            raise RuntimeError("compiled kernels are not available")
        return _backend
    raise ValueError(f"unknown backend {backend!r}")
