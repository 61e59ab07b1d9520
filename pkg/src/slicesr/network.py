"""Slice-to-slice super-resolution network.

Wide-activation residual CNN operating on 2D slices whose first spatial axis
(rows) is the low-resolution axis. The head upsamples rows by ``ceil(r)`` with a
one-dimensional sub-pixel shuffle, then resamples onto the exact target grid,
and adds a cubic B-spline upsampled copy of the input.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .grid import (
    GridSpec1D,
    InterpKernel,
    derive_output_grid,
    resample_array,
    resample_matrix,
    sample_weights,
)

MIN_ROWS = 8


@dataclass(frozen=True)
class SRNetworkConfig:
    channels: int = 256
    blocks: int = 16
    expansion: float = 2.0
    ratio: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.channels < 1 or self.blocks < 0:
            raise ValueError("channels must be positive and blocks non-negative")
        if not self.ratio > 0:
            raise ValueError("ratio must be positive")
        wide = self.channels * self.expansion
        if not self.expansion > 0 or wide != int(wide):
            raise ValueError("channels * expansion must be a positive integer")

    @property
    def upscale(self) -> int:
        return max(1, math.ceil(self.ratio))

    @property
    def wide_channels(self) -> int:
        return int(self.channels * self.expansion)


class WideBlock(nn.Module):
    """conv 3x3 (C -> wide) -> ReLU -> conv 3x3 (wide -> C), plus identity."""

    def __init__(self, channels, wide_channels):
        super().__init__()
        self.expand = nn.Conv2d(channels, wide_channels, 3, padding=1)
        self.reduce = nn.Conv2d(wide_channels, channels, 3, padding=1)

    def forward(self, x):
        return x + self.reduce(F.relu(self.expand(x)))


def output_grid(rows: int, ratio: float) -> tuple[GridSpec1D, GridSpec1D]:
    """LR grid of ``rows`` samples and the target grid, in HR-spacing units."""
    lr = GridSpec1D(rows, ratio, 0.0)
    return lr, derive_output_grid(lr, 1.0)


def output_rows(rows: int, ratio: float) -> int:
    return output_grid(rows, ratio)[1].count


class SRNetwork(nn.Module):
    """Super-resolve ``(B, 1, n, W)`` slices to ``(B, 1, round(n * r), W)``."""

    def __init__(self, config: SRNetworkConfig):
        super().__init__()
        self.config = config
        c = config.channels
        self.head = nn.Conv2d(1, c, 3, padding=1)
        self.body = nn.Sequential(*[WideBlock(c, config.wide_channels) for _ in range(config.blocks)])
        self.tail = nn.Conv2d(c, config.upscale, 3, padding=1)
        self._resamplers = {}
        self.reset_parameters()

    def reset_parameters(self):
        # He init, except each block's closing conv starts at zero so the
        # unscaled residual stack begins as an identity map.
        gen = torch.Generator().manual_seed(self.config.seed)
        with torch.no_grad():
            for m in self.modules():
                if isinstance(m, nn.Conv2d):
                    nn.init.kaiming_normal_(m.weight, nonlinearity="relu", generator=gen)
                    nn.init.zeros_(m.bias)
            for block in self.body:
                block.reduce.weight.zero_()

    def resamplers(self, rows: int):
        """Linear taps (index, weight) from the shuffled grid to the target grid,
        and the dense cubic input -> target matrix, for ``rows`` input rows."""
        if rows not in self._resamplers:
            r, k = self.config.ratio, self.config.upscale
            lr, target = output_grid(rows, r)
            shuffled = GridSpec1D(rows * k, r / k, lr.center)
            index, weight = sample_weights(shuffled, target, InterpKernel.LINEAR)
            up = resample_matrix(lr, target, InterpKernel.CUBIC)
            self._resamplers[rows] = (
                torch.from_numpy(index), torch.from_numpy(weight), torch.from_numpy(up)
            )
        return self._resamplers[rows]

    def detail(self, x: torch.Tensor) -> torch.Tensor:
        """Learned correction term, already on the target grid."""
        b, _, n, w = x.shape
        if n < MIN_ROWS:
            raise ValueError(f"input needs at least {MIN_ROWS} rows, got {n}")
        k = self.config.upscale
        feat = self.body(self.head(x))
        out = self.tail(feat)
        # 1D sub-pixel shuffle: channel j fills row offset j of each k-group
        out = out.permute(0, 2, 1, 3).reshape(b, 1, n * k, w)
        # two-tap gather rather than a matmul keeps results independent of batch size
        index, weight, _ = self.resamplers(n)
        weight = weight.to(out.dtype)
        return out[:, :, index[:, 0]] * weight[:, 0, None] + out[:, :, index[:, 1]] * weight[:, 1, None]

    def upsample(self, x: torch.Tensor) -> torch.Tensor:
        up = self.resamplers(x.shape[2])[2]
        return torch.einsum("mj,bcjw->bcmw", up.to(x.dtype), x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.detail(x) + self.upsample(x)


def build(config: SRNetworkConfig) -> SRNetwork:
    return SRNetwork(config)


def forward(net: SRNetwork, lr_slice: np.ndarray) -> np.ndarray:
    """Super-resolve one slice ``(n, W)`` or a stack ``(B, n, W)``; rows are the LR axis.

    Each slice is evaluated separately, so outputs do not depend on batching.
    The global residual is computed in float64 with the same resampler used
    for baseline interpolation, so a network with zero parameters reproduces
    the cubic baseline exactly.
    """
    lr = np.asarray(lr_slice, dtype=np.float64)
    single = lr.ndim == 2
    if single:
        lr = lr[None]
    if lr.ndim != 3:
        raise ValueError(f"expected a 2D slice or a stack of slices, got shape {lr_slice.shape}")
    if lr.shape[1] < MIN_ROWS:
        raise ValueError(f"input needs at least {MIN_ROWS} rows, got {lr.shape[1]}")
    dtype = next(net.parameters()).dtype
    # one slice per call: convolution kernels pick algorithms by batch shape,
    # which would make float32 results depend on how callers batch slices
    x = torch.from_numpy(lr).to(dtype)[:, None]
    with torch.no_grad():
        detail = np.stack([net.detail(x[i : i + 1])[0, 0].double().numpy() for i in range(len(x))])
    src, dst = output_grid(lr.shape[1], net.config.ratio)
    out = detail + resample_array(lr, 1, src, dst, InterpKernel.CUBIC)
    return out[0] if single else out


def loss(pred, target):
    """Mean squared error; works on numpy arrays and torch tensors."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if torch.is_tensor(pred):
        return F.mse_loss(pred, target)
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(diff * diff))


def zero_parameters(net: SRNetwork) -> SRNetwork:
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    return net


def save_checkpoint(net: SRNetwork, path) -> None:
    torch.save(
        {"config": dataclasses.asdict(net.config), "state": net.state_dict()}, path
    )


def load_checkpoint(path) -> SRNetwork:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    net = SRNetwork(SRNetworkConfig(**blob["config"]))
    net.load_state_dict(blob["state"])
    return net
