"""Synthetic crowd scenes.

Heads are radial intensity bumps whose radii vary across the scene so the
network sees scale variation; clutter is a set of random rectangles and
thin line segments that carry no annotation. A scene is a pure function of
its seed.

Example
-------
>>> from backend.utils.synth import synth_scene
>>> scene = synth_scene(7, n_range=(3, 3), size=32)
>>> scene.count, scene.image.shape
(3, (32, 32, 3))
"""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from backend.utils.rng import derive_rng
from backend.utils.scene import Scene

logger = logging.getLogger(__name__)

HEAD_TINT: tuple[float, ...] = (0.95, 0.8, 0.65)
BACKGROUND_RANGE: tuple[float, float] = (0.15, 0.35)
NOISE_STD: float = 0.02


def _check_range(name: str, bounds: Sequence[float], minimum: float) -> tuple[float, float]:
    lo, hi = float(bounds[0]), float(bounds[1])
    if lo < minimum or hi < lo:
        raise ValueError(f"{name} must satisfy {minimum} <= lo <= hi, got {tuple(bounds)}")
    return lo, hi


def _tint(channels: int) -> np.ndarray:
    if channels == len(HEAD_TINT):
        return np.asarray(HEAD_TINT)
    return np.full(channels, float(np.mean(HEAD_TINT)))


def _draw_rectangle(image: np.ndarray, rng: np.random.Generator) -> None:
    height, width, channels = image.shape
    h = min(height, int(rng.integers(2, max(3, height // 3))))
    w = min(width, int(rng.integers(2, max(3, width // 3))))
    top = int(rng.integers(0, height - h + 1))
    left = int(rng.integers(0, width - w + 1))
    image[top : top + h, left : left + w, :] = rng.uniform(0.0, 1.0, size=channels)


def _draw_line(image: np.ndarray, rng: np.random.Generator) -> None:
    height, width, channels = image.shape
    colour = rng.uniform(0.0, 1.0, size=channels)
    x0, x1 = rng.uniform(0, width, size=2)
    y0, y1 = rng.uniform(0, height, size=2)
    steps = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    xs = np.clip(np.linspace(x0, x1, steps).astype(int), 0, width - 1)
    ys = np.clip(np.linspace(y0, y1, steps).astype(int), 0, height - 1)
    image[ys, xs, :] = colour


def _draw_head(image: np.ndarray, x: float, y: float, radius: float, amplitude: float) -> None:
    height, width, channels = image.shape
    reach = int(np.ceil(radius)) + 1
    rows = np.arange(max(0, int(y) - reach), min(height, int(y) + reach + 1))
    cols = np.arange(max(0, int(x) - reach), min(width, int(x) + reach + 1))
    if not len(rows) or not len(cols):
        return
    dy = rows[:, None] + 0.5 - y
    dx = cols[None, :] + 0.5 - x
    bump = np.clip(1.0 - (dx**2 + dy**2) / radius**2, 0.0, None) ** 2
    patch = image[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1, :]
    patch += amplitude * bump[:, :, None] * _tint(channels)[None, None, :]


def synth_scene(
    seed: int,
    n_range: Sequence[int] = (0, 20),
    scale_range: Sequence[float] = (1.5, 4.0),
    clutter_level: int = 4,
    size: int | Sequence[int] = 64,
    channels: int = 3,
    scene_id: str | None = None,
) -> Scene:
    """Render one scene with an exact point list."""
    n_lo, n_hi = _check_range("n_range", n_range, 0)
    r_lo, r_hi = _check_range("scale_range", scale_range, 0.5)
    if clutter_level < 0:
        raise ValueError(f"clutter_level must be >= 0, got {clutter_level}")
    if channels < 1:
        raise ValueError(f"channels must be >= 1, got {channels}")
    height, width = (int(size), int(size)) if np.isscalar(size) else (int(size[0]), int(size[1]))
    if height < 1 or width < 1:
        raise ValueError(f"size must be positive, got {size}")

    rng = derive_rng(seed, "synth")
    image = np.empty((height, width, channels), dtype=np.float64)
    image[:] = rng.uniform(*BACKGROUND_RANGE, size=channels)
    image += rng.normal(0.0, NOISE_STD, size=image.shape)

    for _ in range(int(clutter_level)):
        if rng.random() < 0.5:
            _draw_rectangle(image, rng)
        else:
            _draw_line(image, rng)

    count = int(rng.integers(int(n_lo), int(n_hi) + 1))
    points = np.column_stack(
        (rng.uniform(0.0, width, size=count), rng.uniform(0.0, height, size=count))
    )
    radii = rng.uniform(r_lo, r_hi, size=count)
    amplitudes = rng.uniform(0.5, 0.8, size=count)
    for (x, y), radius, amplitude in zip(points, radii, amplitudes):
        _draw_head(image, float(x), float(y), float(radius), float(amplitude))

    np.clip(image, 0.0, 1.0, out=image)
    logger.debug("Synthesized scene seed=%d heads=%d clutter=%d", seed, count, clutter_level)
    return Scene(image=image, points=points, id=scene_id or f"scene{seed}")
