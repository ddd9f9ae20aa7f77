"""
Training loop for the density network.

Each step samples a seeded batch, augments every scene (crop + flip), builds
the ground-truth density, runs forward and backward on a fresh tape and
applies one Adam update. Every random choice is keyed on ``(seed, step)``
so a run resumed from a checkpoint replays the uninterrupted one exactly.
The ``train_step_by_step`` generator yields after each update so callers
can log, stop early or checkpoint in between.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Generator, Sequence

import numpy as np
import pandas as pd

from backend.errors import DataError, DivergenceError, NonFiniteError, ShapeError
from backend.models.adam_optimizer import AdamState, adam_step
from backend.models.net_config import NetConfig
from backend.models.saccn import SaccnModel
from backend.models.tensor import Tape, Tensor, precision
from backend.utils.augment import augment
from backend.utils.density import gt_density
from backend.utils.rng import derive_rng
from backend.utils.scene import Scene

logger = logging.getLogger(__name__)


def mse_loss(pred: Tensor, gt: Tensor) -> Tensor:
    """Mean over batch and pixels of ``(pred - gt)²``."""
    if pred.shape != gt.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} and target {gt.shape} differ")
    diff = pred - gt
    return (diff * diff).mean()


@dataclass
class TrainResult:
    model: SaccnModel
    state: AdamState
    loss_curve: list[tuple[int, float]] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.loss_curve[0][1] if self.loss_curve else float("nan")

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1][1] if self.loss_curve else float("nan")

    def loss_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.loss_curve, columns=["step", "loss"])

    def write_loss_csv(self, path: str | Path) -> Path:
        """Loss curve as ``step,loss`` CSV."""
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            self.loss_frame().to_csv(path, index=False)
        except OSError as exc:
            raise DataError(f"{path}: loss curve write failed: {exc}") from exc
        return path


class SaccnTrainer:
    """Adam training of a :class:`SaccnModel` on a list of scenes.

    Example
    -------
    >>> trainer = SaccnTrainer(model, scenes)          # doctest: +SKIP
    >>> for update in trainer.train_step_by_step(10):  # doctest: +SKIP
    ...     print(update["step"], update["loss"])
    """

    def __init__(
        self,
        model: SaccnModel,
        scenes: Sequence[Scene],
        state: AdamState | None = None,
    ) -> None:
        if not scenes:
            raise DataError("training needs at least one scene")
        self.__model: SaccnModel = model
        self.__config: NetConfig = model.config
        self.__scenes: list[Scene] = list(scenes)
        self.__state: AdamState = (
            state or model.params.optimizer_state or AdamState.from_config(model.config)
        )
        self.__loss_curve: list[tuple[int, float]] = []

    @property
    def state(self) -> AdamState:
        return self.__state

    @property
    def loss_curve(self) -> list[tuple[int, float]]:
        return list(self.__loss_curve)

    def batch_indices(self, step: int) -> np.ndarray:
        """Scene indices drawn for 1-based ``step``."""
        rng = derive_rng(self.__config.seed, "batch", step)
        n = len(self.__scenes)
        size = self.__config.batch_size
        if size <= n:
            return rng.permutation(n)[:size]
        return rng.integers(0, n, size=size)

    def make_batch(self, step: int) -> tuple[Tensor, Tensor]:
        """Augmented image batch (N×C×c×c) and its density target (N×1×c×c)."""
        cfg = self.__config
        images: list[np.ndarray] = []
        targets: list[np.ndarray] = []
        for j, index in enumerate(self.batch_indices(step)):
            scene = augment(
                self.__scenes[int(index)],
                cfg.crop,
                cfg.flip_p,
                seed=cfg.seed,
                index=(step - 1) * cfg.batch_size + j,
            )
            images.append(scene.chw())
            targets.append(gt_density(scene.points, (scene.height, scene.width), cfg.sigma).values[None])
        return Tensor.from_array(np.stack(images)), Tensor.from_array(np.stack(targets))

    def train_step_by_step(self, steps: int | None = None) -> Generator[dict[str, Any], None, None]:
        """Run ``steps`` more updates, yielding after each one."""
        cfg = self.__config
        params = self.__model.params
        targets = [tensor for _, tensor in params.items()]
        total: int = cfg.steps if steps is None else int(steps)
        first: int = self.__state.t + 1
        last: int = self.__state.t + total

        for step in range(first, last + 1):
            images, target = self.make_batch(step)
            try:
                with Tape(rng_seed=cfg.seed) as tape:
                    loss = mse_loss(self.__model(images), target)
                    tape.backward(loss, targets=targets)
                loss_value: float = loss.item()
                adam_step(params, self.__state)
            except NonFiniteError as exc:
                raise DivergenceError(f"training diverged at step {step}: {exc}") from exc
            finally:
                params.zero_grad()

            self.__loss_curve.append((step, loss_value))
            if step == first or step % cfg.log_every == 0 or step == last:
                logger.info("step %d/%d loss=%.6g", step, last, loss_value)
            yield {
                "step": step,
                "max_steps": last,
                "loss": loss_value,
                "is_complete": step == last,
            }

    def train(
        self,
        steps: int | None = None,
        on_update: Callable[[dict[str, Any]], None] | None = None,
    ) -> TrainResult:
        for update in self.train_step_by_step(steps):
            if on_update is not None:
                on_update(update)
        return TrainResult(self.__model, self.__state, self.loss_curve)


def train(
    config: NetConfig,
    scenes: Sequence[Scene],
    model: SaccnModel | None = None,
    steps: int | None = None,
) -> TrainResult:
    """Build (or continue) a model and train it under ``config.precision``."""
    config.validate()
    with precision(config.precision):
        model = model or SaccnModel.build(config)
        trainer = SaccnTrainer(model, scenes)
        logger.info(
            "Training on %d scenes: steps=%d batch=%d crop=%d lr=%g",
            len(scenes),
            config.steps if steps is None else steps,
            config.batch_size,
            config.crop,
            config.lr,
        )
        return trainer.train(steps)
