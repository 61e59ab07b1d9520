"""3D scalar volume with physical spacing metadata."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class Volume:
    """3D image with per-axis spacing (mm) and a designated low-resolution axis.

    ``through_axis`` is ``None`` only when it cannot be inferred (isotropic
    spacing); pipeline steps that need it reject such volumes.
    ``intensity_scale`` is the factor the data was divided by on load.
    ``affine`` maps voxel indices to world coordinates; defaults to
    ``diag(spacing)``.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    through_axis: Optional[int] = None
    intensity_scale: float = 1.0
    affine: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {self.data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 and np.isfinite(s) for s in spacing):
            raise ValueError(f"spacing must be three positive numbers, got {self.spacing}")
        self.spacing = spacing
        if self.through_axis is not None and self.through_axis not in (0, 1, 2):
            raise ValueError(f"through_axis must be 0, 1 or 2, got {self.through_axis}")
        if not (self.intensity_scale > 0 and np.isfinite(self.intensity_scale)):
            raise ValueError("intensity_scale must be positive")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("volume data contains non-finite values")
        if self.affine is None:
            self.affine = np.diag(list(spacing) + [1.0])
        else:
            self.affine = np.array(self.affine, dtype=np.float64)
            if self.affine.shape != (4, 4):
                raise ValueError("affine must be 4x4")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def replace(self, **changes) -> "Volume":
        return dataclasses.replace(self, **changes)

    def regridded(self, axis: int, data: np.ndarray, new_spacing: float) -> "Volume":
        """Copy with ``axis`` resampled to ``new_spacing`` about the same FOV center."""
        n_old = self.data.shape[axis]
        n_new = data.shape[axis]
        ratio = new_spacing / self.spacing[axis]
        affine = self.affine.copy()
        column = affine[:3, axis].copy()
        affine[:3, axis] = column * ratio
        affine[:3, 3] += column * (0.5 * (n_old - 1) - 0.5 * (n_new - 1) * ratio)
        spacing = list(self.spacing)
        spacing[axis] = float(new_spacing)
        return self.replace(data=data, spacing=tuple(spacing), affine=affine)


def infer_through_axis(spacing) -> Optional[int]:
    """Index of the strictly largest spacing, or ``None`` on a tie."""
    spacing = np.asarray(spacing, dtype=np.float64)
    top = int(np.argmax(spacing))
    if np.sum(spacing == spacing[top]) > 1:
        return None
    return top
