"""Numeric core: tensor engine, network blocks, training and metrics.

Import convenience:
>>> from backend.models import NetConfig, SaccnModel, Tensor
"""

from .adam_optimizer import AdamState, adam_step
from .checkpoint import load_checkpoint, read_checkpoint_header, save_checkpoint
from .metrics_calculator import EvalReport, MetricsCalculator, count, game, metrics
from .net_config import NetConfig
from .params import ParamSet
from .saccn import SaccnModel, build
from .tensor import Tape, Tensor, no_grad, precision
from .trainer import SaccnTrainer, TrainResult, mse_loss, train

__all__ = [
    "AdamState",
    "EvalReport",
    "MetricsCalculator",
    "NetConfig",
    "ParamSet",
    "SaccnModel",
    "SaccnTrainer",
    "Tape",
    "Tensor",
    "TrainResult",
    "adam_step",
    "build",
    "count",
    "game",
    "load_checkpoint",
    "metrics",
    "mse_loss",
    "no_grad",
    "precision",
    "read_checkpoint_header",
    "save_checkpoint",
    "train",
]
