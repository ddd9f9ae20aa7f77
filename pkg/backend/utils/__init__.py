"""Data-side helpers: scenes, density targets, synthesis, augmentation and IO.

Public API:
>>> from backend.utils import Scene, DensityMap, gt_density, synth_scene, augment
"""

from .augment import augment
from .dataset_io import SceneDirectory, read_image, write_density, write_image
from .density import gt_density
from .rng import derive_rng, derive_seed
from .scene import DensityMap, Scene
from .sklearn_comparison import SklearnComparison
from .synth import synth_scene

__all__ = [
    "DensityMap",
    "Scene",
    "SceneDirectory",
    "SklearnComparison",
    "augment",
    "derive_rng",
    "derive_seed",
    "gt_density",
    "read_image",
    "synth_scene",
    "write_density",
    "write_image",
]
