"""Scene and density-map records shared by the data pipeline and the network.

Point coordinates are continuous: pixel ``(row i, col j)`` covers
``[j, j+1) × [i, i+1)`` and a point ``(x, y)`` lies in bounds when
``0 <= x <= W`` and ``0 <= y <= H``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from backend.errors import DataError


@dataclass
class Scene:
    """H×W×C image in [0, 1] plus (x, y) head annotations."""

    image: np.ndarray
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    id: str = "scene"

    def __post_init__(self) -> None:
        image = np.asarray(self.image, dtype=np.float64)
        if image.ndim == 2:
            image = image[:, :, None]
        if image.ndim != 3:
            raise DataError(f"scene {self.id}: image must be H×W×C, got shape {image.shape}")
        self.image = image
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        self.points = points
        self.check_bounds()

    @property
    def height(self) -> int:
        return int(self.image.shape[0])

    @property
    def width(self) -> int:
        return int(self.image.shape[1])

    @property
    def channels(self) -> int:
        return int(self.image.shape[2])

    @property
    def count(self) -> int:
        return int(len(self.points))

    def check_bounds(self) -> None:
        if not len(self.points):
            return
        xs, ys = self.points[:, 0], self.points[:, 1]
        bad = (xs < 0) | (xs > self.width) | (ys < 0) | (ys > self.height) | ~np.isfinite(xs + ys)
        if bad.any():
            first = self.points[int(np.argmax(bad))]
            raise DataError(
                f"scene {self.id}: point ({first[0]}, {first[1]}) outside "
                f"{self.width}×{self.height} image"
            )

    def chw(self) -> np.ndarray:
        """Image as C×H×W for stacking into a network batch."""
        return np.ascontiguousarray(np.transpose(self.image, (2, 0, 1)))


@dataclass
class DensityMap:
    """Non-negative H×W map whose sum is the crowd count."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"density map must be H×W, got shape {values.shape}")
        self.values = values

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.values.shape[0]), int(self.values.shape[1]))

    @property
    def count(self) -> float:
        return float(self.values.sum())
