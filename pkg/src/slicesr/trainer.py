"""Self-supervised training on in-plane patches of the anisotropic volume."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .acquisition import AcquisitionSpec, SliceProfile, degrade_along_axis
from .grid import GridSpec1D, round_half_away
from .network import SRNetwork, SRNetworkConfig, build, output_rows
from .volume import Volume

log = logging.getLogger(__name__)

LR_PATCH_ROWS = 8


class TrainingDivergedError(FloatingPointError):
    """The training loss became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    total_patches: int = 1_000_000
    batch_size: int = 128
    lr_max: float = 1e-3
    hr_patch_rows: Optional[int] = None
    hr_patch_cols: int = 8
    seed: int = 0
    min_patch_std: float = 1e-3
    max_retries: int = 16

    def __post_init__(self):
        if self.total_patches < 1 or self.batch_size < 1:
            raise ValueError("total_patches and batch_size must be positive")
        if not self.lr_max > 0:
            raise ValueError("lr_max must be positive")

    @property
    def steps(self) -> int:
        return math.ceil(self.total_patches / self.batch_size)

    def patch_rows(self, ratio: float) -> int:
        if self.hr_patch_rows is not None:
            return self.hr_patch_rows
        return round_half_away(LR_PATCH_ROWS * ratio)


@dataclass
class PatchPair:
    hr: np.ndarray
    lr: np.ndarray
    source_axis: int
    slice_index: int
    origin: tuple[int, int]


def one_cycle_lr(step: int, total: int, lr_max: float, pct_start: float = 0.3,
                 div_factor: float = 25.0, final_div_factor: float = 1e4) -> float:
    """Learning rate of a two-phase cosine one-cycle schedule.

    Warms up from ``lr_max / div_factor`` to ``lr_max`` (reached exactly at one
    step), then anneals to ``lr_max / div_factor / final_div_factor``.
    """
    initial = lr_max / div_factor
    final = initial / final_div_factor
    if total < 3:
        return initial
    peak = min(max(1, round(pct_start * total) - 1), total - 2)

    def anneal(start, end, frac):
        return end + 0.5 * (start - end) * (1.0 + math.cos(math.pi * frac))

    if step <= peak:
        return anneal(initial, lr_max, step / peak)
    return anneal(lr_max, final, (step - peak) / (total - 1 - peak))


class PatchSampler:
    """Deterministic stream of paired HR/LR in-plane patches.

    Each patch consumes random draws in a fixed order (slice, degraded axis,
    position with rejection), so a prefix of the stream does not depend on how
    it is split into batches.
    """

    def __init__(self, volume: Volume, spec: AcquisitionSpec, profile: SliceProfile,
                 config: TrainConfig):
        if volume.through_axis is None:
            raise ValueError("volume has no designated through-plane axis")
        self.volume = volume
        self.spec = spec
        self.profile = profile
        self.config = config
        self.rows = config.patch_rows(spec.ratio)
        self.cols = config.hr_patch_cols
        self.in_plane = [a for a in range(3) if a != volume.through_axis]
        plane_shape = [volume.shape[a] for a in self.in_plane]
        if min(plane_shape) < self.rows or min(plane_shape) < self.cols:
            raise ValueError(
                f"in-plane size {plane_shape} is too small for {self.rows}x{self.cols} patches"
            )
        self.grid = GridSpec1D.from_first(self.rows, spec.hr_spacing, 0.0)
        lr_rows = round_half_away(self.rows / spec.ratio)
        if output_rows(lr_rows, spec.ratio) != self.rows:
            raise ValueError(
                f"{self.rows} HR rows do not round-trip through ratio {spec.ratio}"
            )
        self.rng = np.random.default_rng(config.seed)

    def plane(self, index: int) -> np.ndarray:
        return np.take(self.volume.data, index, axis=self.volume.through_axis)

    def _cut(self, plane, axis, r0, c0):
        if axis == 0:
            return plane[r0:r0 + self.rows, c0:c0 + self.cols]
        return plane[r0:r0 + self.cols, c0:c0 + self.rows].T

    def draw(self, count: int) -> list[tuple[int, int, int, int]]:
        """Patch locations ``(slice, plane axis, row, col)`` for the next ``count`` patches."""
        rng = self.rng
        n_slices = self.volume.shape[self.volume.through_axis]
        out = []
        for _ in range(count):
            k = int(rng.integers(n_slices))
            axis = int(rng.integers(2))
            plane = self.plane(k)
            extent = (self.rows, self.cols) if axis == 0 else (self.cols, self.rows)
            for _attempt in range(self.config.max_retries + 1):
                r0 = int(rng.integers(plane.shape[0] - extent[0] + 1))
                c0 = int(rng.integers(plane.shape[1] - extent[1] + 1))
                if np.std(self._cut(plane, axis, r0, c0)) > self.config.min_patch_std:
                    break
            out.append((k, axis, r0, c0))
        return out

    def make(self, locations) -> tuple[np.ndarray, np.ndarray]:
        hr = np.stack([self._cut(self.plane(k), a, r, c) for k, a, r, c in locations])
        lr, _ = degrade_along_axis(hr, 1, self.profile, self.spec, self.grid)
        return hr, lr

    def next_batch(self, count: int):
        locations = self.draw(count)
        hr, lr = self.make(locations)
        return locations, hr, lr


def sample_patches(volume: Volume, spec: AcquisitionSpec, profile: SliceProfile,
                   config: TrainConfig, count: int) -> list[PatchPair]:
    """The first ``count`` training pairs of the stream seeded by ``config.seed``."""
    sampler = PatchSampler(volume, spec, profile, config)
    locations, hr, lr = sampler.next_batch(count)
    return [
        PatchPair(h, l, sampler.in_plane[a], k, (r, c))
        for (k, a, r, c), h, l in zip(locations, hr, lr)
    ]


def train(volume: Volume, spec: AcquisitionSpec, profile: SliceProfile, config: TrainConfig,
          network: SRNetworkConfig | None = None, log_path=None) -> SRNetwork:
    """Fit a fresh network to pairs simulated from ``volume``'s in-plane content.

    One line ``step=<int> lr=<float> loss=<float>`` per step is appended to
    ``log_path`` when given; the same records are kept on
    ``net.training_log``.
    """
    if not spec.ratio > 1:
        raise ValueError(f"training needs a ratio above 1, got {spec.ratio}")
    if network is None:
        network = SRNetworkConfig(ratio=spec.ratio, seed=config.seed)
    elif not math.isclose(network.ratio, spec.ratio, rel_tol=1e-12):
        raise ValueError("network ratio does not match the acquisition ratio")

    torch.manual_seed(config.seed)
    net = build(network)
    net.train()
    sampler = PatchSampler(volume, spec, profile, config)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr_max, betas=(0.9, 0.999), eps=1e-8)
    dtype = next(net.parameters()).dtype
    steps = config.steps
    history = []
    sink = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for step in range(steps):
            size = min(config.batch_size, config.total_patches - step * config.batch_size)
            _, hr, lr = sampler.next_batch(size)
            rate = one_cycle_lr(step, steps, config.lr_max)
            for group in opt.param_groups:
                group["lr"] = rate
            x = torch.from_numpy(lr).to(dtype)[:, None]
            y = torch.from_numpy(hr).to(dtype)[:, None]
            opt.zero_grad(set_to_none=True)
            value = torch.nn.functional.mse_loss(net(x), y)
            if not torch.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step} (lr={rate:.3g}); "
                    f"batch lr range [{lr.min():.4g}, {lr.max():.4g}], "
                    f"hr mean {hr.mean():.4g} std {hr.std():.4g}"
                )
            value.backward()
            opt.step()
            record = (step, rate, value.item())
            history.append(record)
            if sink:
                sink.write(f"step={step} lr={rate:.10g} loss={record[2]:.10g}\n")
            if step % 500 == 0 or step == steps - 1:
                log.info("step %d/%d lr %.3g loss %.5g", step, steps, rate, record[2])
    finally:
        if sink:
            sink.close()
    net.eval()
    net.training_log = history
    return net
