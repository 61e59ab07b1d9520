"""FOV-aware sample grids and separable resampling.

A :class:`GridSpec1D` places ``count`` samples with spacing ``spacing`` on a
fixed world line, symmetric about ``center``. Resampling to a new spacing keeps
the center and the requested spacing exactly and lets the sample count absorb
the rounding, so only the outermost samples move relative to the old extent.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels


class InterpKernel(str, enum.Enum):
    NEAREST = "nearest"
    LINEAR = "linear"
    CUBIC = "cubic-bspline"


class Boundary(str, enum.Enum):
    REFLECT = "reflect"
    ZERO = "zero"


def round_half_away(x: float) -> int:
    """Round to the nearest integer, ties away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass(frozen=True)
class GridSpec1D:
    """Uniform 1D sample grid centred on ``center`` (world units, mm)."""

    count: int
    spacing: float
    center: float = 0.0

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 1:
            raise ValueError(f"grid count must be a positive integer, got {self.count}")
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise ValueError(f"grid spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "count", int(self.count))
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "center", float(self.center))

    @classmethod
    def from_first(cls, count: int, spacing: float, first: float = 0.0) -> "GridSpec1D":
        return cls(count, spacing, first + 0.5 * spacing * (count - 1))

    @property
    def first(self) -> float:
        return self.center - 0.5 * self.spacing * (self.count - 1)

    @property
    def last(self) -> float:
        return self.first + self.spacing * (self.count - 1)

    @property
    def extent(self) -> tuple[float, float]:
        return self.first - 0.5 * self.spacing, self.last + 0.5 * self.spacing

    @property
    def width(self) -> float:
        return self.count * self.spacing

    def positions(self) -> np.ndarray:
        return self.first + self.spacing * np.arange(self.count, dtype=np.float64)


def derive_output_grid(grid: GridSpec1D, new_spacing: float) -> GridSpec1D:
    """Grid with spacing ``new_spacing`` sharing the FOV center of ``grid``.

    The new count is ``round(N * d / new_spacing)``.

    >>> g = derive_output_grid(GridSpec1D(6, 1.0, 2.5), 0.7)
    >>> g.count, round(g.first, 12)
    (9, -0.3)
    """
    if not new_spacing > 0:
        raise ValueError(f"new spacing must be positive, got {new_spacing}")
    count = round_half_away(grid.count * grid.spacing / new_spacing)
    if count < 1:
        raise ValueError(
            f"spacing {new_spacing} leaves no samples on a grid of width {grid.width}"
        )
    return GridSpec1D(count, new_spacing, grid.center)


def mirror_index(index: np.ndarray, n: int) -> np.ndarray:
    """Fold integer indices into ``[0, n)`` with half-sample symmetric extension."""
    m = np.mod(index, 2 * n)
    return np.where(m >= n, 2 * n - 1 - m, m)


def _cubic_weights(t: np.ndarray) -> np.ndarray:
    t2 = t * t
    t3 = t2 * t
    s = 1.0 - t
    return np.stack(
        [
            s * s * s / 6.0,
            (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0,
            (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0,
            t3 / 6.0,
        ],
        axis=1,
    )


def sample_weights(
    src: GridSpec1D,
    dst: GridSpec1D,
    kernel: InterpKernel | str = InterpKernel.LINEAR,
    boundary: Boundary | str = Boundary.REFLECT,
) -> tuple[np.ndarray, np.ndarray]:
    """Tap indices and weights that evaluate ``src`` samples at ``dst`` positions.

    For the cubic kernel the weights apply to B-spline coefficients, not to
    samples; see :func:`bspline_coefficients`.
    """
    kernel = InterpKernel(kernel)
    boundary = Boundary(boundary)
    n = src.count
    # fractional source index of each output sample; exact integers when dst == src
    u = (dst.first - src.first) / src.spacing + np.arange(dst.count) * (dst.spacing / src.spacing)

    if kernel is InterpKernel.NEAREST:
        base = np.floor(u + 0.5).astype(np.intp)
        index = base[:, None]
        weight = np.ones((dst.count, 1))
    elif kernel is InterpKernel.LINEAR:
        base = np.floor(u).astype(np.intp)
        t = u - base
        index = base[:, None] + np.arange(2)
        weight = np.stack([1.0 - t, t], axis=1)
    else:
        base = np.floor(u).astype(np.intp)
        t = u - base
        index = base[:, None] + np.arange(-1, 3)
        weight = _cubic_weights(t)

    index = mirror_index(index, n)
    if boundary is Boundary.ZERO:
        outside = (u < -0.5) | (u > n - 0.5)
        weight = np.where(outside[:, None], 0.0, weight)
    return np.ascontiguousarray(index, dtype=np.intp), np.ascontiguousarray(weight)


@lru_cache(maxsize=64)
def _prefilter_factors(n: int) -> tuple[np.ndarray, np.ndarray]:
    # (c[i-1] + 4 c[i] + c[i+1]) = 6 x[i] with mirrored ends c[-1] = c[0], c[n] = c[n-1]
    diag = np.full(n, 4.0)
    if n == 1:
        diag[0] = 6.0
    else:
        diag[0] = diag[-1] = 5.0
    pivot = np.empty(n)
    upper = np.empty(n)
    pivot[0] = diag[0]
    upper[0] = 1.0 / pivot[0]
    for i in range(1, n):
        pivot[i] = diag[i] - upper[i - 1]
        upper[i] = 1.0 / pivot[i]
    inv_pivot = 1.0 / pivot
    inv_pivot.setflags(write=False)
    upper.setflags(write=False)
    return inv_pivot, upper


def bspline_coefficients(lines: np.ndarray, backend: str | None = None) -> np.ndarray:
    """Cubic B-spline interpolation coefficients of each row of ``lines``.

    Uses half-sample symmetric boundaries, so the spline interpolates the
    samples exactly and its mirror extension matches the ``reflect`` rule.
    """
    lines = np.asarray(lines, dtype=np.float64)
    inv_pivot, upper = _prefilter_factors(lines.shape[-1])
    return kernels.tridiag_solve(6.0 * lines, inv_pivot, upper, backend=backend)


def resample_array(
    array: np.ndarray,
    axis: int,
    src: GridSpec1D,
    dst: GridSpec1D,
    kernel: InterpKernel | str = InterpKernel.LINEAR,
    boundary: Boundary | str = Boundary.REFLECT,
    backend: str | None = None,
) -> np.ndarray:
    """Resample every line of ``array`` along ``axis`` from ``src`` to ``dst``."""
    array = np.asarray(array, dtype=np.float64)
    axis = axis % array.ndim
    if array.shape[axis] != src.count:
        raise ValueError(
            f"axis {axis} has {array.shape[axis]} samples but the grid has {src.count}"
        )
    kernel = InterpKernel(kernel)
    moved = np.moveaxis(array, axis, -1)
    lead = moved.shape[:-1]
    lines = moved.reshape(-1, src.count)
    if kernel is InterpKernel.CUBIC:
        lines = bspline_coefficients(lines, backend=backend)
    index, weight = sample_weights(src, dst, kernel, boundary)
    out = kernels.gather(lines, index, weight, backend=backend)
    return np.moveaxis(out.reshape(lead + (dst.count,)), -1, axis)


def resample_1d(
    signal: np.ndarray,
    src: GridSpec1D,
    dst: GridSpec1D,
    kernel: InterpKernel | str = InterpKernel.LINEAR,
    boundary: Boundary | str = Boundary.REFLECT,
) -> np.ndarray:
    """Evaluate the interpolated ``signal`` (sampled on ``src``) at ``dst`` positions.

    Positions outside the ``src`` extent follow ``boundary``: ``reflect``
    mirrors the signal about the extent edges, ``zero`` returns 0 there.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1 or signal.shape[0] != src.count:
        raise ValueError(
            f"signal of shape {signal.shape} does not match a grid of {src.count} samples"
        )
    return resample_array(signal, 0, src, dst, kernel, boundary)


def resample_matrix(
    src: GridSpec1D,
    dst: GridSpec1D,
    kernel: InterpKernel | str = InterpKernel.LINEAR,
    boundary: Boundary | str = Boundary.REFLECT,
) -> np.ndarray:
    """Dense ``(dst.count, src.count)`` matrix of the (linear) resampling map."""
    return resample_array(np.eye(src.count), 0, src, dst, kernel, boundary)


def axis_grid(volume, axis: int) -> GridSpec1D:
    """Grid of ``axis`` in voxel-index world frame (first voxel at 0)."""
    return GridSpec1D.from_first(volume.shape[axis], volume.spacing[axis], 0.0)


def resample_along_axis(
    volume,
    axis: int,
    new_spacing: float,
    kernel: InterpKernel | str = InterpKernel.CUBIC,
    boundary: Boundary | str = Boundary.REFLECT,
):
    """Resample ``volume`` along ``axis`` to ``new_spacing``, keeping the FOV center.

    Spacing and affine metadata of ``axis`` are updated; other axes are untouched.
    """
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    src = axis_grid(volume, axis)
    dst = derive_output_grid(src, new_spacing)
    data = resample_array(volume.data, axis, src, dst, kernel, boundary)
    return volume.regridded(axis, data, dst.spacing)
