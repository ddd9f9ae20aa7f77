"""Ground-truth density from point annotations.

Each point contributes a fixed-σ Gaussian evaluated at pixel centres within
3σ of the point (per axis), clipped to the image and renormalized to unit
mass, so the map sums to the number of points.

Example
-------
>>> gt = gt_density([(32.0, 32.0)], (64, 64), sigma=4.0)
>>> round(gt.count, 9)
1.0
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from backend.errors import DataError
from backend.utils.scene import DensityMap

TRUNCATE: float = 3.0


def _axis_kernel(center: float, sigma: float, extent: int) -> tuple[int, np.ndarray]:
    """Start index and Gaussian weights along one axis, clipped to ``extent``."""
    radius: float = TRUNCATE * sigma
    lo = max(0, int(math.floor(center - radius - 0.5)))
    hi = min(extent - 1, int(math.ceil(center + radius - 0.5)))
    if hi < lo:
        nearest = min(max(int(math.floor(center)), 0), extent - 1)
        return nearest, np.ones(1)
    centers = np.arange(lo, hi + 1, dtype=np.float64) + 0.5
    offsets = centers - center
    weights = np.where(np.abs(offsets) <= radius, np.exp(-0.5 * (offsets / sigma) ** 2), 0.0)
    if weights.sum() <= 0.0:
        nearest = min(max(int(math.floor(center)), 0), extent - 1)
        return nearest, np.ones(1)
    return lo, weights


def gt_density(
    points: Iterable[Sequence[float]] | np.ndarray,
    shape: tuple[int, int],
    sigma: float = 4.0,
) -> DensityMap:
    """Sum of truncated, border-renormalized unit-mass Gaussians."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    height, width = int(shape[0]), int(shape[1])
    if height < 1 or width < 1:
        raise DataError(f"density shape must be positive, got {shape}")
    pts = np.asarray(list(points) if not isinstance(points, np.ndarray) else points, dtype=np.float64)
    pts = pts.reshape(-1, 2)
    values = np.zeros((height, width), dtype=np.float64)
    for x, y in pts:
        if not (0.0 <= x <= width and 0.0 <= y <= height):
            raise DataError(f"point ({x}, {y}) lies outside the {width}×{height} map")
        col0, wx = _axis_kernel(float(x), sigma, width)
        row0, wy = _axis_kernel(float(y), sigma, height)
        kernel = np.outer(wy, wx)
        values[row0 : row0 + len(wy), col0 : col0 + len(wx)] += kernel / kernel.sum()
    return DensityMap(values)
