"""Random crop and horizontal flip, keyed on ``(seed, index)``."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from backend.errors import DataError
from backend.utils.rng import derive_rng
from backend.utils.scene import Scene


def _crop_extents(crop: int | Sequence[int]) -> tuple[int, int]:
    if np.isscalar(crop):
        return int(crop), int(crop)
    return int(crop[0]), int(crop[1])


def augment(
    scene: Scene,
    crop: int | Sequence[int],
    flip_p: float = 0.5,
    seed: int = 0,
    index: int = 0,
) -> Scene:
    """Uniform crop window, then a mirror with probability ``flip_p``.

    Points inside the closed window ``[x0, x0 + c] × [y0, y0 + c]`` are kept
    and shifted; the rest are dropped. Flipping maps ``x`` to ``c - x``.
    """
    crop_h, crop_w = _crop_extents(crop)
    if crop_h < 1 or crop_w < 1:
        raise DataError(f"scene {scene.id}: crop must be positive, got {crop}")
    if crop_h > scene.height or crop_w > scene.width:
        raise DataError(
            f"scene {scene.id}: crop {crop_h}×{crop_w} larger than image {scene.height}×{scene.width}"
        )
    rng = derive_rng(seed, "augment", index)
    top = int(rng.integers(0, scene.height - crop_h + 1))
    left = int(rng.integers(0, scene.width - crop_w + 1))
    flip: bool = bool(rng.random() < flip_p)

    image = scene.image[top : top + crop_h, left : left + crop_w, :]
    points = scene.points
    if len(points):
        xs, ys = points[:, 0], points[:, 1]
        keep = (xs >= left) & (xs <= left + crop_w) & (ys >= top) & (ys <= top + crop_h)
        points = points[keep] - np.array([left, top], dtype=np.float64)
    if flip:
        image = image[:, ::-1, :]
        if len(points):
            points = np.column_stack((crop_w - points[:, 0], points[:, 1]))
    return Scene(image=np.array(image), points=np.array(points), id=scene.id)
