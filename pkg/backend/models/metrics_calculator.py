"""
Counting metrics for density maps.

MAE and MSE compare per-image counts; MSE is reported as the root of the
mean squared count error. GAME(L) splits each map into a 2^L × 2^L grid
(cell edges at ``floor(i·H / 2^L)``) and sums per-cell absolute count
errors, so GAME(0) is the MAE. The ``literal`` variant uses 2^L full-height
column strips instead.

:class:`MetricsCalculator` accumulates per-image records and builds an
:class:`EvalReport`, cross-checking MAE/MSE against scikit-learn.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from backend.errors import DataError, ShapeError
from backend.utils.scene import DensityMap
from backend.utils.sklearn_comparison import SklearnComparison

GAME_LEVELS: tuple[int, ...] = (0, 1, 2, 3)

ArrayLike = DensityMap | np.ndarray


def _values(density: ArrayLike) -> np.ndarray:
    arr = density.values if isinstance(density, DensityMap) else np.asarray(density, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"density map must be H×W, got shape {arr.shape}")
    return arr


def count(density: ArrayLike) -> float:
    """Sum of all density values."""
    return float(_values(density).sum())


def metrics(pred_counts: Sequence[float], gt_counts: Sequence[float]) -> dict[str, float]:
    """``{"mae": mean|e|, "mse": sqrt(mean e²)}`` over per-image count errors."""
    pred = np.asarray(pred_counts, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt_counts, dtype=np.float64).reshape(-1)
    if pred.size == 0:
        raise DataError("metrics need at least one image")
    if pred.shape != gt.shape:
        raise ShapeError(f"{pred.size} predicted counts against {gt.size} ground-truth counts")
    errors = np.abs(pred - gt)
    return {"mae": float(errors.mean()), "mse": float(np.sqrt(np.mean(errors**2)))}


def _edges(extent: int, parts: int) -> list[int]:
    return [(i * extent) // parts for i in range(parts + 1)]


def game_single(pred: ArrayLike, gt: ArrayLike, level: int, literal: bool = False) -> float:
    """Grid absolute error of one image pair."""
    if level < 0:
        raise ValueError(f"GAME level must be >= 0, got {level}")
    p, g = _values(pred), _values(gt)
    if p.shape != g.shape:
        raise ShapeError(f"GAME: prediction {p.shape} and ground truth {g.shape} differ")
    parts = 2**level
    height, width = p.shape
    rows = [0, height] if literal else _edges(height, parts)
    cols = _edges(width, parts)
    total = 0.0
    for r0, r1 in zip(rows[:-1], rows[1:]):
        for c0, c1 in zip(cols[:-1], cols[1:]):
            total += abs(float(p[r0:r1, c0:c1].sum()) - float(g[r0:r1, c0:c1].sum()))
    return total


def game(
    pred: ArrayLike | Sequence[ArrayLike],
    gt: ArrayLike | Sequence[ArrayLike],
    level: int,
    literal: bool = False,
) -> float:
    """GAME(level) averaged over images; single maps count as one image."""
    preds = [pred] if _is_single(pred) else list(pred)
    gts = [gt] if _is_single(gt) else list(gt)
    if not preds:
        raise DataError("GAME needs at least one image")
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predicted maps against {len(gts)} ground-truth maps")
    return float(np.mean([game_single(p, g, level, literal) for p, g in zip(preds, gts)]))


def _is_single(item: Any) -> bool:
    return isinstance(item, DensityMap) or (isinstance(item, np.ndarray) and item.ndim == 2)


def grid_label(literal: bool) -> str:
    return "2^L column strips" if literal else "2^L x 2^L grid"


@dataclass
class ImageRecord:
    index: int
    id: str
    pred_count: float
    gt_count: float
    points: int
    game: list[float]


@dataclass
class EvalReport:
    mae: float
    mse: float
    game: list[float]
    grid: str
    images: list[ImageRecord] = field(default_factory=list)
    sklearn_check: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        """Fixed key order: mae, mse, game, grid, images, sklearn_check."""
        return {
            "mae": self.mae,
            "mse": self.mse,
            "game": list(self.game),
            "grid": self.grid,
            "images": [
                {"id": r.id, "pred": r.pred_count, "gt": r.gt_count, "points": r.points}
                for r in self.images
            ],
            "sklearn_check": self.sklearn_check,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


class MetricsCalculator:
    """Collect per-image results and reduce them into an :class:`EvalReport`.

    Records are reduced in index order regardless of arrival order, so a
    parallel evaluation produces the same report as a sequential one.
    """

    def __init__(self, levels: Iterable[int] = GAME_LEVELS, literal: bool = False) -> None:
        self.__levels: tuple[int, ...] = tuple(levels)
        self.__literal: bool = bool(literal)
        self.__records: dict[int, ImageRecord] = {}

    def __len__(self) -> int:
        return len(self.__records)

    def measure(
        self,
        index: int,
        scene_id: str,
        pred: ArrayLike,
        gt: ArrayLike,
        points: int,
    ) -> ImageRecord:
        """Per-image counts and GAME terms; pure, safe to call from workers."""
        return ImageRecord(
            index=int(index),
            id=scene_id,
            pred_count=count(pred),
            gt_count=count(gt),
            points=int(points),
            game=[game_single(pred, gt, level, self.__literal) for level in self.__levels],
        )

    def add(self, record: ImageRecord) -> None:
        if record.index in self.__records:
            raise ValueError(f"image index {record.index} recorded twice")
        self.__records[record.index] = record

    def report(self) -> EvalReport:
        records = [self.__records[i] for i in sorted(self.__records)]
        if not records:
            raise DataError("evaluation produced no images")
        pred_counts = [r.pred_count for r in records]
        gt_counts = [r.gt_count for r in records]
        summary = metrics(pred_counts, gt_counts)
        per_level = np.asarray([r.game for r in records], dtype=np.float64)
        cross = SklearnComparison().calculate_sklearn_results(pred_counts, gt_counts)
        if not cross.get("error"):
            cross["agrees"] = SklearnComparison.agrees(summary, cross["metrics"])
        return EvalReport(
            mae=summary["mae"],
            mse=summary["mse"],
            game=[float(v) for v in per_level.mean(axis=0)],
            grid=grid_label(self.__literal),
            images=records,
            sklearn_check=cross,
        )
