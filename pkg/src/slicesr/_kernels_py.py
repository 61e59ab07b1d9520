"""Pure-numpy fallback for the compiled line kernels."""
import numpy as np


def gather(lines, index, weight):
    out = weight[:, 0] * lines[:, index[:, 0]]
    for k in range(1, index.shape[1]):
        out = out + weight[:, k] * lines[:, index[:, k]]
    return out


def tridiag_solve(rhs, inv_pivot, upper):
    # forward sweep: o[i] = (rhs[i] - o[i-1]) / pivot[i]; back: o[i] -= upper[i] * o[i+1]
    n = rhs.shape[1]
    out = np.empty_like(rhs)
    out[:, 0] = rhs[:, 0] * inv_pivot[0]
    for i in range(1, n):
        out[:, i] = (rhs[:, i] - out[:, i - 1]) * inv_pivot[i]
    for i in range(n - 2, -1, -1):
        out[:, i] = out[:, i] - upper[i] * out[:, i + 1]
    return out
