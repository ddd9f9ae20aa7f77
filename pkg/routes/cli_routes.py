"""routes.cli_routes
+---------------------------------------------
Argument parser wiring subcommands to
:class:`controller.cli_controller.CliController` methods.

This module contains *no* business logic: it declares flags, parses argv
and hands the namespace to the controller.

Example
-------
>>> from routes.cli_routes import run
>>> run(["inspect", "--checkpoint", "out/model.ckpt"])  # doctest: +SKIP
0
"""

from __future__ import annotations

import argparse
from typing import Sequence

from backend.errors import SaccnError, UsageError
from backend.models.gradcheck_suite import CHECKS
from backend.models.net_config import RAM_MODES, SAM_MODES, NetConfig, parse_bool
from controller.cli_controller import CliController

COMMANDS: tuple[str, ...] = ("synth", "train", "eval", "infer", "gradcheck", "inspect")


class CliArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises :class:`UsageError` instead of exiting 2."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    pass


def _config_flag(group, key: str, help_text: str) -> None:
    """A NetConfig override; absent from the namespace unless given."""
    default = getattr(NetConfig(), key)
    kind = parse_bool if isinstance(default, bool) else type(default)
    choices = {"precision": ("f32", "f64"), "ram_mode": RAM_MODES, "sam_mode": SAM_MODES}
    kwargs = {"choices": choices[key]} if key in choices else {}
    group.add_argument(
        f"--{key.replace('_', '-')}",
        dest=key,
        type=kind,
        default=argparse.SUPPRESS,
        help=f"{help_text} (default: {default})",
        **kwargs,
    )


def _common_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("common")
    group.add_argument("--config", default=None, help="key=value config file")
    group.add_argument("--out", default="out", help="output directory")
    _config_flag(group, "seed", "global seed; SACCN_SEED is the fallback")
    _config_flag(group, "precision", "float precision")
    return parent


def _model_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group("model and training")
    _config_flag(group, "base_width", "channels of stage 1; later stages use 2x, 4x, 8x, 8x")
    _config_flag(group, "input_channels", "image channels")
    _config_flag(group, "ram_reduction", "regional attention MLP reduction")
    _config_flag(group, "ssa_reduction", "spatial self-attention reduction")
    _config_flag(group, "sigma", "ground-truth Gaussian sigma in pixels")
    _config_flag(group, "crop", "training crop size (multiple of 16)")
    _config_flag(group, "flip_p", "horizontal flip probability")
    _config_flag(group, "batch_size", "scenes per step")
    _config_flag(group, "lr", "Adam learning rate")
    _config_flag(group, "beta1", "Adam first-moment decay")
    _config_flag(group, "beta2", "Adam second-moment decay")
    _config_flag(group, "eps", "Adam epsilon")
    _config_flag(group, "steps", "total optimizer steps")
    _config_flag(group, "log_every", "log the loss every k steps")

    variants = parent.add_argument_group("ablation variants")
    _config_flag(variants, "use_ram", "regional attention on dense and skip paths")
    _config_flag(variants, "ram_mode", "keep both RAM gates, or only the channel or spatial one")
    _config_flag(variants, "use_sam", "semantic attention at the bottleneck")
    _config_flag(variants, "sam_mode", "keep both SAM branches, or only SSA or CSA")
    _config_flag(variants, "use_amm", "asymmetric multi-scale modules in the decoder")
    _config_flag(variants, "amm_square", "replace each asymmetric pair with a square kernel")
    _config_flag(variants, "dense", "regional-attention dense connections in the encoder")
    _config_flag(variants, "skip", "regional-attention skip connections to the decoder")
    return parent


def build_parser() -> CliArgumentParser:
    common, model = _common_parent(), _model_parent()
    parser = CliArgumentParser(
        prog="saccn",
        description="Scale-aware crowd counting on synthetic scenes.",
        formatter_class=_Formatter,
    )
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.required = True

    def add(name: str, help_text: str, parents: list) -> argparse.ArgumentParser:
        return sub.add_parser(name, help=help_text, parents=parents, formatter_class=_Formatter)

    synth = add("synth", "write a synthetic scene dataset to --out", [common, model])
    synth.add_argument("--n", type=int, default=8, help="number of scenes")
    synth.add_argument("--size", type=int, default=64, help="scene height and width")
    synth.add_argument("--channels", type=int, default=3, help="1 (P5) or 3 (P6)")
    synth.add_argument("--min-count", type=int, default=0, help="fewest heads per scene")
    synth.add_argument("--max-count", type=int, default=20, help="most heads per scene")
    synth.add_argument("--min-scale", type=float, default=1.5, help="smallest head radius")
    synth.add_argument("--max-scale", type=float, default=4.0, help="largest head radius")
    synth.add_argument("--clutter", type=int, default=4, help="background shapes per scene")
    synth.add_argument("--emit-density", action="store_true", help="also write <id>.den.pgm/.den.json")

    train = add("train", "train a model; writes model.ckpt and loss.csv to --out", [common, model])
    train.add_argument("--data", required=True, help="scene directory")
    train.add_argument("--resume", default=None, help="checkpoint to continue from")

    evaluate = add("eval", "evaluate a checkpoint; writes report.json to --out", [common, model])
    evaluate.add_argument("--data", required=True, help="scene directory")
    evaluate.add_argument("--checkpoint", default=None, help="model checkpoint")
    evaluate.add_argument("--jobs", type=int, default=1, help="worker threads")
    evaluate.add_argument("--strict-order", action="store_true", help="sequential, bit-exact reduction")
    evaluate.add_argument("--gt-as-pred", action="store_true", help="score ground truth against itself")
    evaluate.add_argument("--game-literal", action="store_true", help="GAME over 2^L column strips")

    infer = add("infer", "predict one image; writes density PGM + JSON to --out", [common])
    infer.add_argument("--checkpoint", required=True, help="model checkpoint")
    infer.add_argument("--image", required=True, help="P5/P6 image")

    gradcheck = add("gradcheck", "run the gradient-check suite", [common])
    gradcheck.add_argument(
        "--checks", nargs="*", default=None, choices=sorted(CHECKS), metavar="NAME",
        help="subset of checks to run",
    )

    inspect = add("inspect", "print a checkpoint header and tensor table", [common])
    inspect.add_argument("--checkpoint", required=True, help="model checkpoint")
    return parser


def run(argv: Sequence[str] | None = None, controller: CliController | None = None) -> int:
    """Parse ``argv`` and run the subcommand; returns the process exit code."""
    controller = controller or CliController()
    try:
        args = build_parser().parse_args(argv)
        return controller.dispatch(args.command, args)
    except SaccnError as exc:
        controller._echo(f"error: {exc}")
        return exc.exit_code
    except SystemExit as exc:
        return int(exc.code or 0)
