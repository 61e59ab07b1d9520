"""Analytic structured phantom for simulation experiments.

The phantom is a continuous function of world position (mm): soft-edged
ellipsoids at random orientations, a few planar edges, and a band-limited
texture. Because it is analytic it can be rendered on any sample grid, which
lets ground truth be evaluated exactly on a super-resolved output grid.
"""
from __future__ import annotations

import numpy as np

from .grid import GridSpec1D
from .volume import Volume


def _random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    return q * np.sign(np.diag(r))


class Phantom:
    """Seeded random phantom filling a cube of side ``size_mm`` centred on the origin."""

    def __init__(self, size_mm: float = 64.0, seed: int = 0, n_ellipsoids: int = 14,
                 n_waves: int = 10, edge_width: float = 0.6):
        rng = np.random.default_rng(seed)
        half = 0.5 * size_mm
        self.edge_width = edge_width
        # world position of the phantom origin in the volume frame
        self.offset = (0.0, 0.0, 0.0)
        self.head_axes = half * rng.uniform(0.78, 0.9, size=3)
        self.head_rot = _random_rotation(rng)
        self.ellipsoids = []
        for _ in range(n_ellipsoids):
            center = rng.uniform(-0.45, 0.45, size=3) * half
            axes = rng.uniform(0.08, 0.35, size=3) * half
            self.ellipsoids.append(
                (center, axes, _random_rotation(rng), rng.uniform(-0.45, 0.6))
            )
        self.planes = [
            (_unit(rng.normal(size=3)), rng.uniform(-0.3, 0.3) * half, rng.uniform(0.1, 0.25))
            for _ in range(3)
        ]
        self.waves = [
            (_unit(rng.normal(size=3)) * 2 * np.pi / rng.uniform(5.0, 14.0),
             rng.uniform(0, 2 * np.pi), rng.uniform(0.02, 0.05))
            for _ in range(n_waves)
        ]

    def _soft_inside(self, pts, center, axes, rot):
        local = (pts - center) @ rot
        q = np.sqrt(np.sum((local / axes) ** 2, axis=-1))
        # signed distance approximated by radial scaling of the smallest axis
        dist = (1.0 - q) * axes.min()
        return 0.5 * (1.0 + np.tanh(dist / self.edge_width))

    def __call__(self, x, y, z) -> np.ndarray:
        """Evaluate on the tensor grid of coordinate vectors ``x``, ``y``, ``z``."""
        pts = np.stack(np.meshgrid(x, y, z, indexing="ij"), axis=-1)
        head = self._soft_inside(pts, 0.0, self.head_axes, self.head_rot)
        value = 0.5 * head
        for center, axes, rot, level in self.ellipsoids:
            value += level * self._soft_inside(pts, center, axes, rot) * head
        for normal, offset, level in self.planes:
            side = 0.5 * (1.0 + np.tanh((pts @ normal - offset) / self.edge_width))
            value += level * side * head
        for k, phase, amp in self.waves:
            value += amp * np.sin(pts @ k + phase) * head
        return np.clip(value, 0.0, None)

    def render(self, grids) -> np.ndarray:
        """Render on grids expressed in the volume frame of :func:`make_phantom`."""
        return self(*(g.positions() - c for g, c in zip(grids, self.offset)))


def phantom_grids(shape, spacing) -> list[GridSpec1D]:
    """Centred grids matching the voxel-index frame used by :class:`Volume`."""
    return [GridSpec1D(n, s, 0.5 * s * (n - 1)) for n, s in zip(shape, spacing)]


def make_phantom(shape=(64, 64, 64), spacing=1.0, seed: int = 0) -> tuple[Volume, Phantom]:
    """Render a phantom volume; also returns the analytic phantom.

    The phantom is centred on the volume's FOV center, so rendering it on any
    grid derived with :func:`~slicesr.grid.derive_output_grid` gives matching
    ground truth.
    """
    if np.isscalar(spacing):
        spacing = (float(spacing),) * 3
    size = max(n * s for n, s in zip(shape, spacing))
    phantom = Phantom(size_mm=size, seed=seed)
    grids = phantom_grids(shape, spacing)
    phantom.offset = tuple(g.center for g in grids)
    return Volume(phantom.render(grids), tuple(spacing)), phantom


def _unit(v):
    return v / np.linalg.norm(v)
