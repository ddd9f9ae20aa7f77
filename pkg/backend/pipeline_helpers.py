"""
Pipeline helper functions behind the command-line surface.

Provides orchestration for:
- Synthesizing scene datasets (optionally with ground-truth density files)
- The training lifecycle (fresh or resumed), checkpoint and loss-curve output
- Evaluation fan-out over a worker pool and EvalReport emission
- Single-image inference
- The gradient-check suite
- Checkpoint inspection

This module keeps file layout and sequencing out of the controller so the
CLI layer stays thin.
"""

from __future__ import annotations

import contextvars
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Any

from backend.errors import DataError, GradCheckError, UsageError
from backend.models.checkpoint import load_checkpoint, read_checkpoint_header, save_checkpoint
from backend.models.gradcheck_suite import run_suite, worst_result
from backend.models.metrics_calculator import EvalReport, ImageRecord, MetricsCalculator
from backend.models.net_config import NetConfig
from backend.models.saccn import SaccnModel
from backend.models.tensor import precision
from backend.models.trainer import SaccnTrainer
from backend.utils.dataset_io import SceneDirectory, read_image, write_density
from backend.utils.density import gt_density
from backend.utils.rng import derive_seed
from backend.utils.scene import DensityMap, Scene
from backend.utils.synth import synth_scene

logger = logging.getLogger(__name__)

CHECKPOINT_NAME: str = "model.ckpt"
LOSS_CSV_NAME: str = "loss.csv"
REPORT_NAME: str = "report.json"


class PipelineHelper:
    """Orchestrates one subcommand run against a resolved :class:`NetConfig`."""

    def __init__(self, config: NetConfig) -> None:
        self.config: NetConfig = config.validate()

    # Data

    def synthesize(
        self,
        out_dir: str | Path,
        n: int,
        size: int,
        channels: int = 3,
        n_range: tuple[int, int] = (0, 20),
        scale_range: tuple[float, float] = (1.5, 4.0),
        clutter: int = 4,
        emit_density: bool = False,
    ) -> dict[str, Any]:
        """Write ``n`` seeded scenes; scene ``i`` depends only on (seed, i)."""
        if n < 0:
            raise UsageError(f"--n must be >= 0, got {n}")
        store = SceneDirectory(out_dir)
        try:
            scenes = [
                synth_scene(
                    derive_seed(self.config.seed, "scene", i),
                    n_range=n_range,
                    scale_range=scale_range,
                    clutter_level=clutter,
                    size=size,
                    channels=channels,
                    scene_id=f"scene{i:04d}",
                )
                for i in range(n)
            ]
        except ValueError as exc:
            raise UsageError(f"synth: {exc}") from exc
        store.write(scenes)
        if emit_density:
            for scene in scenes:
                density = gt_density(scene.points, (scene.height, scene.width), self.config.sigma)
                write_density(density, out_dir, scene.id, count=float(scene.count))
        logger.info("Synthesized %d scenes of %d×%d into %s", n, size, size, out_dir)
        return {"scenes": n, "points": sum(s.count for s in scenes), "out": str(out_dir)}

    @staticmethod
    def load_scenes(data_dir: str | Path) -> list[Scene]:
        scenes = SceneDirectory(data_dir).read()
        logger.info("Loaded %d scenes from %s", len(scenes), data_dir)
        return scenes

    # Training lifecycle

    def train(
        self,
        data_dir: str | Path,
        out_dir: str | Path,
        resume: str | Path | None = None,
    ) -> dict[str, Any]:
        """Train to ``config.steps`` total updates, then write checkpoint and loss curve."""
        scenes = self.load_scenes(data_dir)
        if not scenes:
            raise DataError(f"{data_dir}: no scenes to train on")
        out_dir = Path(out_dir)
        with precision(self.config.precision):
            if resume is not None:
                model = load_checkpoint(resume, self.config)
                done = model.params.optimizer_state.t if model.params.optimizer_state else 0
                logger.info("Resuming from %s at step %d", resume, done)
            else:
                model = SaccnModel.build(self.config)
                done = 0
            remaining = max(0, self.config.steps - done)
            trainer = SaccnTrainer(model, scenes)
            result = trainer.train(remaining)
            checkpoint = save_checkpoint(out_dir / CHECKPOINT_NAME, model, result.state)
        loss_csv = result.write_loss_csv(out_dir / LOSS_CSV_NAME)
        logger.info("Training finished: %d steps, final loss %.6g", result.state.t, result.final_loss)
        return {
            "steps": result.state.t,
            "variant": model.variant,
            "initial_loss": result.initial_loss,
            "final_loss": result.final_loss,
            "checkpoint": str(checkpoint),
            "loss_curve": str(loss_csv),
        }

    # Evaluation

    def evaluate(
        self,
        data_dir: str | Path,
        out_dir: str | Path,
        checkpoint: str | Path | None = None,
        jobs: int = 1,
        strict_order: bool = False,
        gt_as_pred: bool = False,
        literal: bool = False,
    ) -> EvalReport:
        """Predict every scene, reduce the metrics and write ``report.json``."""
        if jobs < 1:
            raise UsageError(f"--jobs must be >= 1, got {jobs}")
        if checkpoint is None and not gt_as_pred:
            raise UsageError("eval needs --checkpoint unless --gt-as-pred is set")
        scenes = self.load_scenes(data_dir)
        if not scenes:
            raise DataError(f"{data_dir}: no scenes to evaluate")
        calculator = MetricsCalculator(literal=literal)
        with precision(self.config.precision):
            model = None if gt_as_pred else load_checkpoint(checkpoint)

            def measure(index: int, scene: Scene) -> ImageRecord:
                gt = gt_density(scene.points, (scene.height, scene.width), self.config.sigma)
                pred: DensityMap = gt if model is None else model.predict(scene.image)
                return calculator.measure(index, scene.id, pred, gt, scene.count)

            if strict_order or jobs == 1:
                for index, scene in enumerate(scenes):
                    calculator.add(measure(index, scene))
            else:
                with ThreadPoolExecutor(max_workers=jobs) as pool:
                    futures = [
                        pool.submit(contextvars.copy_context().run, measure, index, scene)
                        for index, scene in enumerate(scenes)
                    ]
                    for future in as_completed(futures):
                        calculator.add(future.result())
        report = calculator.report()
        report_path = Path(out_dir) / REPORT_NAME
        try:
            report_path.parent.mkdir(parents=True, exist_ok=True)
            report_path.write_text(report.to_json(), encoding="utf-8")
        except OSError as exc:
            raise DataError(f"{report_path}: report write failed: {exc}") from exc
        logger.info(
            "Evaluated %d scenes: MAE=%.4f MSE=%.4f report=%s",
            len(scenes), report.mae, report.mse, report_path,
        )
        return report

    # Inference

    def infer(self, checkpoint: str | Path, image_path: str | Path, out_dir: str | Path) -> dict[str, Any]:
        image_path = Path(image_path)
        with precision(self.config.precision):
            model = load_checkpoint(checkpoint)
            density = model.predict(read_image(image_path))
        scene_id = image_path.name.split(".", 1)[0]
        density_path, json_path = write_density(density, out_dir, scene_id)
        logger.info("Predicted count %.3f for %s", density.count, image_path)
        return {"count": density.count, "density": str(density_path), "json": str(json_path)}

    # Verification

    def gradcheck(self, names: list[str] | None = None) -> dict[str, Any]:
        """Run the suite; raise :class:`GradCheckError` when any check fails."""
        try:
            results = run_suite(seed=self.config.seed, names=names)
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from exc
        worst = worst_result(results)
        summary = {
            "results": [(r.name, r.error, r.passed) for r in results],
            "worst": worst.name,
            "worst_error": worst.error,
            "tolerance": worst.tolerance,
            "seconds": sum(r.seconds for r in results),
        }
        if not all(r.passed for r in results):
            failed = ", ".join(r.name for r in results if not r.passed)
            error = GradCheckError(
                f"gradient check failed for {failed}; worst {worst.name} error {worst.error:.3e}"
            )
            error.summary = summary
            raise error
        return summary

    @staticmethod
    def inspect(checkpoint: str | Path) -> dict[str, Any]:
        """Header, tensor table and parameter totals of a checkpoint."""
        header = read_checkpoint_header(checkpoint)
        model = SaccnModel(header.config)
        stored = {name: shape for name, shape in header.tensors}
        return {
            "version": header.version,
            "variant": model.variant,
            "config": header.config_text,
            "tensors": header.tensors,
            "param_count": sum(math.prod(stored[name]) for name in model.params.names() if name in stored),
            "model_param_count": model.param_count(),
        }
