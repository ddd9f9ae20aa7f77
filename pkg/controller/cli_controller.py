# controller/cli_controller.py

from __future__ import annotations

import argparse
import json
import logging
from typing import Any, Callable

from backend.errors import GradCheckError, SaccnError, UsageError
from backend.pipeline_helpers import PipelineHelper
from backend.utils.config_loader import ConfigLoader

CONFIG_FLAG_KEYS: tuple[str, ...] = (
    "base_width",
    "input_channels",
    "ram_reduction",
    "ssa_reduction",
    "seed",
    "sigma",
    "crop",
    "flip_p",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "steps",
    "log_every",
    "precision",
    "use_ram",
    "ram_mode",
    "use_sam",
    "sam_mode",
    "use_amm",
    "amm_square",
    "dense",
    "skip",
)


class CliController:
    """Handle one parsed command line.

    Each public method serves one subcommand: it resolves the config, logs
    the request and delegates to :class:`backend.pipeline_helpers.PipelineHelper`.
    :meth:`dispatch` maps domain exceptions onto process exit codes.

    Example
    -------
    >>> from controller.cli_controller import CliController
    >>> ctrl = CliController()
    >>> # ctrl.dispatch("gradcheck", parsed_args) -> 0
    """

    def __init__(self, loader: ConfigLoader | None = None, echo: Callable[[str], None] = print) -> None:
        self.loader: ConfigLoader = loader or ConfigLoader()
        self._echo: Callable[[str], None] = echo
        self._logger = logging.getLogger(__name__)

    def dispatch(self, command: str, args: argparse.Namespace) -> int:
        handler = getattr(self, command.replace("-", "_"), None)
        if handler is None:
            raise UsageError(f"unknown subcommand {command!r}")
        try:
            self._logger.info("Running %s", command)
            handler(args)
            self._logger.info("%s finished", command)
            return 0
        except SaccnError as exc:
            self._logger.exception("%s failed", command)
            self._echo(f"error: {exc}")
            return exc.exit_code

    def _helper(self, args: argparse.Namespace) -> PipelineHelper:
        overrides = {key: getattr(args, key) for key in CONFIG_FLAG_KEYS if hasattr(args, key)}
        config = self.loader.resolve(getattr(args, "config", None), overrides)
        return PipelineHelper(config)

    def _emit(self, payload: dict[str, Any]) -> None:
        self._echo(json.dumps(payload, indent=2, default=str))

    # --- Subcommands ---------------------------------------------------------

    def synth(self, args: argparse.Namespace) -> None:
        self._logger.info("Synth requested: n=%d size=%d out=%s", args.n, args.size, args.out)
        summary = self._helper(args).synthesize(
            args.out,
            n=args.n,
            size=args.size,
            channels=args.channels,
            n_range=(args.min_count, args.max_count),
            scale_range=(args.min_scale, args.max_scale),
            clutter=args.clutter,
            emit_density=args.emit_density,
        )
        self._emit(summary)

    def train(self, args: argparse.Namespace) -> None:
        self._logger.info("Train requested: data=%s out=%s resume=%s", args.data, args.out, args.resume)
        self._emit(self._helper(args).train(args.data, args.out, resume=args.resume))

    def eval(self, args: argparse.Namespace) -> None:
        self._logger.info(
            "Eval requested: data=%s checkpoint=%s jobs=%d strict_order=%s",
            args.data, args.checkpoint, args.jobs, args.strict_order,
        )
        report = self._helper(args).evaluate(
            args.data,
            args.out,
            checkpoint=args.checkpoint,
            jobs=args.jobs,
            strict_order=args.strict_order,
            gt_as_pred=args.gt_as_pred,
            literal=args.game_literal,
        )
        self._emit({"mae": report.mae, "mse": report.mse, "game": report.game, "grid": report.grid})

    def infer(self, args: argparse.Namespace) -> None:
        self._logger.info("Infer requested: image=%s checkpoint=%s", args.image, args.checkpoint)
        self._emit(self._helper(args).infer(args.checkpoint, args.image, args.out))

    def gradcheck(self, args: argparse.Namespace) -> None:
        try:
            summary = self._helper(args).gradcheck(args.checks or None)
        except GradCheckError as exc:
            if getattr(exc, "summary", None):
                self._print_gradcheck(exc.summary)
            raise
        self._print_gradcheck(summary)

    def _print_gradcheck(self, summary: dict[str, Any]) -> None:
        for name, error, passed in summary["results"]:
            self._echo(f"{name:<18} {error:.3e} {'ok' if passed else 'FAIL'}")
        self._echo(
            f"worst: {summary['worst']} {summary['worst_error']:.3e} "
            f"(tolerance {summary['tolerance']:.0e})"
        )

    def inspect(self, args: argparse.Namespace) -> None:
        info = PipelineHelper.inspect(args.checkpoint)
        self._echo(f"version: {info['version']}")
        self._echo(f"variant: {info['variant']}")
        self._echo("config:")
        for line in info["config"].splitlines():
            self._echo(f"  {line}")
        self._echo(f"tensors: {len(info['tensors'])}")
        for name, shape in info["tensors"]:
            self._echo(f"  {name:<40} {'x'.join(str(s) for s in shape) or 'scalar'}")
        self._echo(f"parameters: {info['param_count']} (model expects {info['model_param_count']})")
