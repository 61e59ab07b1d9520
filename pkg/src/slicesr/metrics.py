"""Reference-based image quality and segmentation consistency metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 7
K1, K2 = 0.01, 0.03


def _array(v) -> np.ndarray:
    return np.asarray(getattr(v, "data", v), dtype=np.float64)


def _pair(reference, test):
    ref, tst = _array(reference), _array(test)
    if ref.shape != tst.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {tst.shape}")
    return ref, tst


def data_range(reference) -> float:
    ref = _array(reference)
    return float(ref.max() - ref.min())


def psnr(reference, test) -> float:
    """Peak signal-to-noise ratio in dB; the peak is the reference's value range."""
    ref, tst = _pair(reference, test)
    mse = float(np.mean((ref - tst) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range(ref) ** 2 / mse)


def _box_mean(x: np.ndarray, win: int) -> np.ndarray:
    for axis in range(x.ndim):
        x = sliding_window_view(x, win, axis=axis).sum(axis=-1)
    return x / win ** x.ndim


def ssim(reference, test, window: int = SSIM_WINDOW) -> float:
    """Mean structural similarity over all full ``window``-sided cubic windows.

    Uses uniform weights and unbiased (sample) variances, the conventions of
    scikit-image's ``structural_similarity``.
    """
    ref, tst = _pair(reference, test)
    if any(n < window for n in ref.shape):
        raise ValueError(f"volume {ref.shape} is smaller than the {window}-voxel window")
    r = data_range(ref)
    c1, c2 = (K1 * r) ** 2, (K2 * r) ** 2
    n = window ** ref.ndim
    cov_norm = n / (n - 1)
    mx, my = _box_mean(ref, window), _box_mean(tst, window)
    vx = cov_norm * (_box_mean(ref * ref, window) - mx * mx)
    vy = cov_norm * (_box_mean(tst * tst, window) - my * my)
    vxy = cov_norm * (_box_mean(ref * tst, window) - mx * my)
    num = (2 * mx * my + c1) * (2 * vxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


@dataclass
class LabelVolume:
    data: np.ndarray
    label_ids: Optional[frozenset] = None
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.issubdtype(self.data.dtype, np.integer):
            raise ValueError("label volumes must hold integers")
        if self.label_ids is None:
            self.label_ids = frozenset(int(v) for v in np.unique(self.data))


@dataclass
class CDSCResult:
    per_label: dict[int, float]
    mean: float
    undefined: list[int] = field(default_factory=list)


def dice(a: np.ndarray, b: np.ndarray) -> float:
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return math.nan
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def cdsc(labels_hr, labels_sr, include_background: bool = False) -> CDSCResult:
    """Per-label Dice between segmentations of the HR and super-resolved volumes.

    Labels absent from both inputs are reported as NaN and left out of the mean.
    """
    if not isinstance(labels_hr, LabelVolume):
        labels_hr = LabelVolume(labels_hr)
    if not isinstance(labels_sr, LabelVolume):
        labels_sr = LabelVolume(labels_sr)
    if labels_hr.data.shape != labels_sr.data.shape:
        raise ValueError(f"shape mismatch: {labels_hr.data.shape} vs {labels_sr.data.shape}")
    labels = sorted(labels_hr.label_ids | labels_sr.label_ids)
    if not include_background:
        labels = [l for l in labels if l != 0]
    per_label, undefined = {}, []
    for label in labels:
        value = dice(labels_hr.data == label, labels_sr.data == label)
        per_label[label] = value
        if math.isnan(value):
            undefined.append(label)
    defined = [v for v in per_label.values() if not math.isnan(v)]
    mean = float(np.mean(defined)) if defined else math.nan
    return CDSCResult(per_label, mean, undefined)


def format_report(values: dict) -> str:
    """``key=value`` lines; infinities print as ``inf``."""
    lines = []
    for key, value in values.items():
        if isinstance(value, float):
            text = "inf" if value == math.inf else ("nan" if math.isnan(value) else f"{value:.10g}")
        else:
            text = str(value)
        lines.append(f"{key}={text}")
    return "\n".join(lines) + "\n"
