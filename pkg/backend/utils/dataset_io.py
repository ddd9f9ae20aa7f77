"""backend.utils.dataset_io
+------------------------------------------------
Read and write scene directories.

* ``<id>.pgm``: binary P5 (grayscale) or P6 (RGB), 8-bit.
* ``<id>.ann``: one ``x y`` pair per line, ``#`` comments allowed.
* ``<id>.den.pgm`` + ``<id>.den.json``: max-normalized density for viewing
  and the exact count it carried.

Images are quantized to 8 bits on disk and mapped back to [0, 1] on load;
points are written with ``repr`` so they read back exactly.

Example
-------
>>> from backend.utils.dataset_io import SceneDirectory
>>> from backend.utils.synth import synth_scene
>>> store = SceneDirectory("/tmp/scenes")
>>> store.write([synth_scene(1, size=32)])
1
>>> [s.count for s in store.read()] == [synth_scene(1, size=32).count]
True
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from PIL import Image

from backend.errors import AnnotationError, DataError
from backend.utils.scene import DensityMap, Scene

logger = logging.getLogger(__name__)

IMAGE_SUFFIX: str = ".pgm"
ANNOTATION_SUFFIX: str = ".ann"
DENSITY_SUFFIX: str = ".den.pgm"
DENSITY_JSON_SUFFIX: str = ".den.json"


def quantize(image: np.ndarray) -> np.ndarray:
    """[0, 1] floats to uint8, rounding to nearest."""
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_image(image: np.ndarray, path: str | Path) -> None:
    """Write an H×W×C image in [0, 1] as P5 (C=1) or P6 (C=3)."""
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 3 and arr.shape[2] != 3:
        raise DataError(f"{path}: only 1 or 3 channels can be stored, got {arr.shape[2]}")
    try:
        Image.fromarray(quantize(arr)).save(Path(path), format="PPM")
    except Exception as exc:
        raise DataError(f"{path}: image write failed: {exc}") from exc


def read_image(path: str | Path) -> np.ndarray:
    """Read a P5/P6 file into an H×W×C float64 array in [0, 1]."""
    try:
        with Image.open(Path(path)) as img:
            if img.mode not in ("L", "RGB"):
                img = img.convert("RGB")
            arr = np.asarray(img, dtype=np.float64) / 255.0
    except FileNotFoundError as exc:
        raise DataError(f"{path}: image file not found") from exc
    except Exception as exc:
        raise DataError(f"{path}: image read failed: {exc}") from exc
    return arr[:, :, None] if arr.ndim == 2 else arr


def format_points(points: np.ndarray) -> str:
    return "".join(f"{float(x)!r} {float(y)!r}\n" for x, y in np.asarray(points).reshape(-1, 2))


def parse_points(text: str, source: str = "<annotation>") -> np.ndarray:
    """Parse ``x y`` lines; malformed lines raise with their line number."""
    rows: list[tuple[float, float]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        tokens = body.split()
        if len(tokens) != 2:
            raise AnnotationError(f"{source}:{lineno}: expected 'x y', got {line!r}")
        try:
            x, y = float(tokens[0]), float(tokens[1])
        except ValueError as exc:
            raise AnnotationError(f"{source}:{lineno}: not a number in {line!r}") from exc
        if not (np.isfinite(x) and np.isfinite(y)):
            raise AnnotationError(f"{source}:{lineno}: non-finite coordinate in {line!r}")
        rows.append((x, y))
    return np.asarray(rows, dtype=np.float64).reshape(-1, 2)


def write_density(
    density: DensityMap,
    directory: str | Path,
    scene_id: str,
    count: float | None = None,
) -> tuple[Path, Path]:
    """Emit ``<id>.den.pgm`` (max-normalized) and ``<id>.den.json``."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{directory}: cannot create output directory: {exc}") from exc
    values = density.values
    peak = float(values.max()) if values.size else 0.0
    view = values / peak if peak > 0 else np.zeros_like(values)
    image_path = directory / f"{scene_id}{DENSITY_SUFFIX}"
    json_path = directory / f"{scene_id}{DENSITY_JSON_SUFFIX}"
    write_image(view, image_path)
    total = float(values.sum())
    payload: dict[str, Any] = {
        "count": float(total if count is None else count),
        "sum": total,
        "shape": [int(values.shape[0]), int(values.shape[1])],
    }
    try:
        json_path.write_text(json.dumps(payload) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{json_path}: density sidecar write failed: {exc}") from exc
    return image_path, json_path


def read_density_json(path: str | Path) -> dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except Exception as exc:
        raise DataError(f"{path}: density sidecar unreadable: {exc}") from exc


class SceneDirectory:
    """A directory of ``<id>.pgm`` / ``<id>.ann`` pairs."""

    def __init__(self, root: str | Path) -> None:
        self.__root: Path = Path(root)

    @property
    def root(self) -> Path:
        return self.__root

    def ids(self) -> list[str]:
        """Sorted ids of every annotation or image file (density files excluded)."""
        if not self.__root.is_dir():
            raise DataError(f"{self.__root}: dataset directory does not exist")
        found: set[str] = set()
        for path in self.__root.iterdir():
            name = path.name
            if name.endswith(DENSITY_SUFFIX) or name.endswith(DENSITY_JSON_SUFFIX):
                continue
            if name.endswith(ANNOTATION_SUFFIX):
                found.add(name[: -len(ANNOTATION_SUFFIX)])
            elif name.endswith(IMAGE_SUFFIX):
                found.add(name[: -len(IMAGE_SUFFIX)])
        return sorted(found)

    def write_scene(self, scene: Scene) -> None:
        try:
            self.__root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataError(f"{self.__root}: cannot create dataset directory: {exc}") from exc
        write_image(scene.image, self.__root / f"{scene.id}{IMAGE_SUFFIX}")
        ann_path = self.__root / f"{scene.id}{ANNOTATION_SUFFIX}"
        try:
            ann_path.write_text(format_points(scene.points), encoding="utf-8")
        except OSError as exc:
            raise DataError(f"{ann_path}: annotation write failed: {exc}") from exc

    def write(self, scenes: Iterable[Scene]) -> int:
        written: int = 0
        for scene in scenes:
            self.write_scene(scene)
            written += 1
        logger.info("Wrote %d scenes to %s", written, self.__root)
        return written

    def read_scene(self, scene_id: str) -> Scene:
        image_path = self.__root / f"{scene_id}{IMAGE_SUFFIX}"
        ann_path = self.__root / f"{scene_id}{ANNOTATION_SUFFIX}"
        if not image_path.is_file():
            raise DataError(f"scene {scene_id}: image file {image_path.name} is missing")
        if not ann_path.is_file():
            raise DataError(f"scene {scene_id}: annotation file {ann_path.name} is missing")
        image = read_image(image_path)
        points = parse_points(ann_path.read_text(encoding="utf-8"), source=str(ann_path))
        return Scene(image=image, points=points, id=scene_id)

    def read(self) -> list[Scene]:
        ids = self.ids()
        if not ids:
            logger.warning("Dataset directory %s is empty", self.__root)
        return [self.read_scene(scene_id) for scene_id in ids]
