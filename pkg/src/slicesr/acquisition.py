"""Slice profiles and the multi-slice forward model.

A 2D multi-slice acquisition is modelled as a blur of the high-resolution
object by the slice profile followed by FOV-aware resampling to the slice
separation.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import kernels
from .grid import (
    Boundary,
    GridSpec1D,
    InterpKernel,
    derive_output_grid,
    mirror_index,
    resample_1d,
    resample_array,
)
from .volume import Volume

log = logging.getLogger(__name__)

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
NORMALIZATION_TOL = 1e-8
ENVELOPE_OVERSAMPLING = 64


class ProfileFormatError(ValueError):
    """Raised for malformed slice-profile files."""


@dataclass(frozen=True)
class SliceProfile:
    """Discrete slice-selection profile living on the high-resolution grid.

    Build instances with :meth:`from_taps` to get normalization; the
    constructor only validates.
    """

    taps: np.ndarray
    tap_spacing: float
    name: str = "custom"
    fwhm: float = field(init=False)

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64).ravel()
        if taps.size % 2 == 0:
            raise ValueError(f"profile needs an odd number of taps, got {taps.size}")
        if not np.all(np.isfinite(taps)):
            raise ValueError("profile taps must be finite")
        if abs(taps.sum() - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"profile taps sum to {taps.sum()!r}, expected 1")
        if not self.tap_spacing > 0:
            raise ValueError("tap spacing must be positive")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "tap_spacing", float(self.tap_spacing))
        object.__setattr__(self, "fwhm", measure_fwhm(taps, self.tap_spacing))

    @classmethod
    def from_taps(cls, taps, tap_spacing: float, name: str = "custom") -> "SliceProfile":
        taps = np.asarray(taps, dtype=np.float64)
        total = taps.sum()
        if total == 0 or not np.isfinite(total):
            raise ValueError("profile taps must have a finite, nonzero sum")
        return cls(taps / total, tap_spacing, name)

    @property
    def nonnegative(self) -> bool:
        return bool(np.all(self.taps >= 0))

    def __len__(self):
        return self.taps.size

    def __eq__(self, other):
        if not isinstance(other, SliceProfile):
            return NotImplemented
        return self.tap_spacing == other.tap_spacing and np.array_equal(self.taps, other.taps)

    __hash__ = None


def measure_fwhm(taps: np.ndarray, tap_spacing: float) -> float:
    """Full width at half maximum of the tap envelope.

    The envelope is the cubic B-spline through the taps, evaluated at
    ``ENVELOPE_OVERSAMPLING`` points per tap; the half-max crossings are then
    interpolated linearly between envelope samples.
    """
    taps = np.asarray(taps, dtype=np.float64)
    src = GridSpec1D(taps.size, 1.0)
    dst = GridSpec1D(taps.size * ENVELOPE_OVERSAMPLING, 1.0 / ENVELOPE_OVERSAMPLING)
    env = resample_1d(taps, src, dst, InterpKernel.CUBIC)
    x = dst.positions()
    peak = int(np.argmax(env))
    half = 0.5 * env[peak]
    if half <= 0:
        return 0.0

    def crossing(step):
        i = peak
        while 0 <= i + step < env.size and env[i + step] >= half:
            i += step
        if not 0 <= i + step < env.size:
            # envelope never drops below half: clip at the support edge
            return x[i] + 0.5 * step / ENVELOPE_OVERSAMPLING
        inner, outer = env[i], env[i + step]
        return x[i] + step * (inner - half) / (inner - outer) / ENVELOPE_OVERSAMPLING

    return float((crossing(1) - crossing(-1)) * tap_spacing)


def make_profile(
    shape: str = "gaussian",
    fwhm_mm: float = 1.0,
    taps: int = 21,
    tap_spacing_mm: float = 1.0,
) -> SliceProfile:
    """Parametric slice profile sampled on a ``taps``-point grid.

    ``gaussian`` samples a Gaussian of the requested FWHM at the tap centres.
    ``rect`` gives each tap the fraction of its cell covered by
    ``[-fwhm/2, fwhm/2]``.
    """
    if taps < 1 or taps % 2 == 0:
        raise ValueError(f"tap count must be odd and positive, got {taps}")
    if not fwhm_mm > 0:
        raise ValueError(f"FWHM must be positive, got {fwhm_mm}")
    if not tap_spacing_mm > 0:
        raise ValueError(f"tap spacing must be positive, got {tap_spacing_mm}")
    if taps * tap_spacing_mm < fwhm_mm:
        raise ValueError(
            f"FWHM {fwhm_mm} mm exceeds the filter support of {taps} x {tap_spacing_mm} mm"
        )
    x = (np.arange(taps) - taps // 2) * tap_spacing_mm
    if shape == "gaussian":
        sigma = fwhm_mm / FWHM_PER_SIGMA
        values = np.exp(-0.5 * (x / sigma) ** 2)
    elif shape == "rect":
        lo = np.maximum(x - 0.5 * tap_spacing_mm, -0.5 * fwhm_mm)
        hi = np.minimum(x + 0.5 * tap_spacing_mm, 0.5 * fwhm_mm)
        values = np.clip(hi - lo, 0.0, None) / tap_spacing_mm
    else:
        raise ValueError(f"unknown profile shape {shape!r}")
    return SliceProfile.from_taps(values, tap_spacing_mm, name=f"{shape}:{fwhm_mm:g}")


def default_tap_count(fwhm_mm: float, tap_spacing_mm: float, minimum: int = 21) -> int:
    """Odd tap count covering +-3 sigma of a Gaussian, never below ``minimum``."""
    half = math.ceil(3.0 * fwhm_mm / FWHM_PER_SIGMA / tap_spacing_mm)
    return max(minimum, 2 * half + 1)


def save_profile(profile: SliceProfile, path) -> None:
    lines = [f"# tap_spacing_mm={profile.tap_spacing:.17g}"]
    lines += [f"{v:.17g}" for v in profile.taps]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_profile(path) -> SliceProfile:
    """Read a profile text file (header line, then one tap per line)."""
    text = Path(path).read_text(encoding="utf-8")
    rows = [r.strip() for r in text.splitlines() if r.strip()]
    if not rows or not rows[0].startswith("#"):
        raise ProfileFormatError(f"{path}: missing '# tap_spacing_mm=' header")
    key, sep, value = rows[0].lstrip("#").strip().partition("=")
    if key.strip() != "tap_spacing_mm" or not sep:
        raise ProfileFormatError(f"{path}: malformed header {rows[0]!r}")
    try:
        spacing = float(value)
        taps = np.array([float(r) for r in rows[1:]])
    except ValueError as exc:
        raise ProfileFormatError(f"{path}: {exc}") from None
    if taps.size == 0 or taps.size % 2 == 0:
        raise ProfileFormatError(f"{path}: expected an odd number of taps, got {taps.size}")
    if not np.all(np.isfinite(taps)) or not np.isfinite(spacing) or spacing <= 0:
        raise ProfileFormatError(f"{path}: non-finite or invalid values")
    total = taps.sum()
    if abs(total - 1.0) > 1e-12:
        warnings.warn(f"profile {path} sums to {total:.6g}; renormalizing", stacklevel=2)
        taps = taps / total
    profile = SliceProfile(taps, spacing, name=f"file:{Path(path).name}")
    if not profile.nonnegative:
        log.warning("profile %s has negative taps", path)
    return profile


@dataclass(frozen=True)
class AcquisitionSpec:
    """Slice thickness and gap of a 2D acquisition, and the target HR spacing (mm)."""

    thickness: float
    gap: float
    hr_spacing: float

    def __post_init__(self):
        if not self.thickness > 0:
            raise ValueError("slice thickness must be positive")
        if self.gap < 0:
            raise ValueError("slice gap must be non-negative")
        if not self.hr_spacing > 0:
            raise ValueError("HR spacing must be positive")

    @property
    def lr_separation(self) -> float:
        return self.thickness + self.gap

    @property
    def ratio(self) -> float:
        return self.lr_separation / self.hr_spacing


@lru_cache(maxsize=128)
def _conv_table(n: int, n_taps: int) -> np.ndarray:
    # out[i] = sum_t taps[t] * x[i + half - t], mirrored into range
    half = n_taps // 2
    idx = np.arange(n)[:, None] + half - np.arange(n_taps)[None, :]
    table = mirror_index(idx, n).astype(np.intp)
    table.setflags(write=False)
    return table


def convolve_along(array: np.ndarray, axis: int, taps: np.ndarray,
                   backend: str | None = None) -> np.ndarray:
    """Convolve every line along ``axis`` with ``taps`` (reflect boundary, same size)."""
    array = np.asarray(array, dtype=np.float64)
    moved = np.moveaxis(array, axis, -1)
    n = moved.shape[-1]
    lines = moved.reshape(-1, n)
    table = _conv_table(n, len(taps))
    weight = np.broadcast_to(np.asarray(taps, dtype=np.float64), table.shape)
    out = kernels.gather(lines, table, weight, backend=backend)
    return np.moveaxis(out.reshape(moved.shape), -1, axis)


def lr_grid_for(spec: AcquisitionSpec, input_grid: GridSpec1D) -> GridSpec1D:
    return derive_output_grid(
        input_grid, spec.lr_separation * (input_grid.spacing / spec.hr_spacing)
    )


def _check_profile_grid(profile: SliceProfile, input_grid: GridSpec1D):
    if not math.isclose(profile.tap_spacing, input_grid.spacing, rel_tol=1e-9):
        raise ValueError(
            f"profile tap spacing {profile.tap_spacing} mm does not match "
            f"grid spacing {input_grid.spacing} mm"
        )


def degrade_along_axis(
    array: np.ndarray,
    axis: int,
    profile: SliceProfile,
    spec: AcquisitionSpec,
    input_grid: GridSpec1D,
    kernel: InterpKernel | str = InterpKernel.LINEAR,
    backend: str | None = None,
) -> tuple[np.ndarray, GridSpec1D]:
    """Apply ``(x * h) downsampled by r`` to every line of ``array`` along ``axis``."""
    _check_profile_grid(profile, input_grid)
    out_grid = lr_grid_for(spec, input_grid)
    blurred = convolve_along(array, axis, profile.taps, backend=backend)
    lr = resample_array(blurred, axis, input_grid, out_grid, kernel, Boundary.REFLECT, backend)
    return lr, out_grid


def degrade_1d(
    signal: np.ndarray,
    profile: SliceProfile,
    spec: AcquisitionSpec,
    input_grid: GridSpec1D,
    kernel: InterpKernel | str = InterpKernel.LINEAR,
) -> tuple[np.ndarray, GridSpec1D]:
    """Simulate a 1D slice-direction acquisition of ``signal``.

    Returns the low-resolution samples and their grid.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1 or signal.size != input_grid.count:
        raise ValueError("signal length does not match the input grid")
    return degrade_along_axis(signal, 0, profile, spec, input_grid, kernel)


def simulate_acquisition(
    hr: Volume,
    thickness: float,
    gap: float,
    axis: int = 2,
    shape: str = "gaussian",
    profile: SliceProfile | None = None,
) -> Volume:
    """Simulate a multi-slice acquisition of ``hr`` along ``axis``.

    The default profile is a Gaussian whose FWHM equals ``thickness``.
    """
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    spacing = hr.spacing[axis]
    if thickness < spacing:
        raise ValueError(
            f"slice thickness {thickness} mm is below the source spacing {spacing} mm"
        )
    spec = AcquisitionSpec(thickness, gap, spacing)
    if profile is None:
        profile = make_profile(
            shape, thickness, default_tap_count(thickness, spacing), spacing
        )
    src = GridSpec1D.from_first(hr.shape[axis], spacing, 0.0)
    data, dst = degrade_along_axis(hr.data, axis, profile, spec, src)
    out = hr.regridded(axis, data, dst.spacing)
    out.through_axis = axis
    return out
