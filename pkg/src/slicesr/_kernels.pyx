# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled line kernels.

Every routine works on a 2D C-contiguous float64 array of shape (lines, samples)
and processes each line independently, accumulating in the same order as the
numpy fallback in ``_kernels_py`` so both backends agree bit for bit.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def gather(const double[:, ::1] lines, const cnp.intp_t[:, ::1] index,
           const double[:, ::1] weight):
    """out[l, m] = sum_k weight[m, k] * lines[l, index[m, k]], summed in k order."""
    cdef Py_ssize_t n_lines = lines.shape[0]
    cdef Py_ssize_t n_out = index.shape[0]
    cdef Py_ssize_t n_taps = index.shape[1]
    cdef Py_ssize_t l, m, k
    cdef double acc
    out = np.empty((n_lines, n_out), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for l in range(n_lines):
            for m in range(n_out):
                acc = weight[m, 0] * lines[l, index[m, 0]]
                for k in range(1, n_taps):
                    acc = acc + weight[m, k] * lines[l, index[m, k]]
                o[l, m] = acc
    return out


def tridiag_solve(const double[:, ::1] rhs, const double[::1] inv_pivot,
                  const double[::1] upper):
    """Solve a symmetric tridiagonal system with unit off-diagonals per line.

    ``inv_pivot`` and ``upper`` hold the pre-factored forward sweep (see
    ``_kernels_py.tridiag_solve`` for the recurrence).
    """
    cdef Py_ssize_t n_lines = rhs.shape[0]
    cdef Py_ssize_t n = rhs.shape[1]
    cdef Py_ssize_t l, i
    out = np.empty((n_lines, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for l in range(n_lines):
            o[l, 0] = rhs[l, 0] * inv_pivot[0]
            for i in range(1, n):
                o[l, i] = (rhs[l, i] - o[l, i - 1]) * inv_pivot[i]
            for i in range(n - 2, -1, -1):
                o[l, i] = o[l, i] - upper[i] * o[l, i + 1]
    return out
