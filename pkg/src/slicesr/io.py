"""NIfTI volume I/O with exact spacing round-trips."""
from __future__ import annotations

import json
from pathlib import Path

import nibabel as nib
from nibabel.openers import ImageOpener
import numpy as np

from .volume import Volume, infer_through_axis

NORMALIZE_PERCENTILE = 99.9
_EXT_CODE = "comment"
_EXT_TAG = "slicesr"


class VolumeFormatError(ValueError):
    """Unsupported container or missing metadata."""


def _is_nifti(path: Path) -> bool:
    name = path.name.lower()
    return name.endswith(".nii") or name.endswith(".nii.gz")


def intensity_scale_of(data: np.ndarray) -> float:
    scale = float(np.percentile(data, NORMALIZE_PERCENTILE))
    if not scale > 0:
        scale = float(np.max(np.abs(data)))
    return scale if scale > 0 else 1.0


def _exact_spacing(img, zooms):
    # pixdim is float32 in the header; the extension carries the float64 values
    for ext in img.header.extensions:
        try:
            blob = json.loads(ext.get_content().decode("utf-8"))
        except (ValueError, UnicodeDecodeError, AttributeError):
            continue
        if isinstance(blob, dict) and blob.get("tag") == _EXT_TAG:
            exact = tuple(float(s) for s in blob["spacing"])
            if np.allclose(exact, zooms, rtol=1e-6, atol=0):
                return exact
    return zooms


def _raw_pixdim(path: Path, header_class) -> tuple[float, ...]:
    # nibabel's checked header silently turns zero pixdims into 1 mm
    with ImageOpener(str(path)) as f:
        raw = header_class.from_fileobj(f, check=False)
    return tuple(abs(float(z)) for z in raw["pixdim"][1:4])


def load_volume(path, normalize: bool = True, through_axis: int | None = None) -> Volume:
    """Read a NIfTI file (``.nii`` or ``.nii.gz``).

    With ``normalize`` the data is divided by its 99.9th percentile and the
    factor is kept in ``intensity_scale``; :func:`save_volume` undoes it.
    The through-plane axis is the axis with the strictly largest spacing
    unless ``through_axis`` is given.
    """
    path = Path(path)
    if not _is_nifti(path):
        raise VolumeFormatError(f"{path}: unsupported container (expected .nii or .nii.gz)")
    img = nib.load(str(path))
    data = np.asarray(img.dataobj, dtype=np.float64)
    if data.ndim == 4 and data.shape[3] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise VolumeFormatError(f"{path}: expected a 3D volume, got shape {data.shape}")
    zooms = tuple(float(z) for z in img.header.get_zooms()[:3])
    raw = _raw_pixdim(path, type(img.header))
    if len(zooms) != 3 or not all(np.isfinite(z) and z > 0 for z in raw + zooms):
        raise VolumeFormatError(f"{path}: missing or invalid voxel spacing {raw}")
    spacing = _exact_spacing(img, zooms)
    scale = intensity_scale_of(data) if normalize else 1.0
    if through_axis is None:
        through_axis = infer_through_axis(spacing)
    return Volume(data / scale, spacing, through_axis, scale, np.array(img.affine, dtype=np.float64))


def save_volume(volume: Volume, path) -> None:
    """Write ``volume`` as float32 NIfTI, restoring the original intensity scale."""
    path = Path(path)
    if not _is_nifti(path):
        raise VolumeFormatError(f"{path}: unsupported container (expected .nii or .nii.gz)")
    data = (volume.data * volume.intensity_scale).astype(np.float32)
    img = nib.Nifti1Image(data, volume.affine)
    img.header.set_zooms(volume.spacing)
    blob = json.dumps({"tag": _EXT_TAG, "spacing": list(volume.spacing)}).encode("utf-8")
    img.header.extensions.append(nib.nifti1.Nifti1Extension(_EXT_CODE, blob))
    nib.save(img, str(path))
