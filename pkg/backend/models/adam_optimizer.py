"""
Adam optimizer over a :class:`ParamSet`.

Moments are zero-initialized per parameter name and kept in the parameter's
own dtype so a checkpointed f32 run resumes bit-for-bit. The update is the
bias-corrected form

    m <- b1·m + (1-b1)·g,   v <- b2·v + (1-b2)·g²
    p <- p - lr · m̂ / (sqrt(v̂) + eps)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from backend.errors import AutogradError, NonFiniteError, ShapeError
from backend.models.params import ParamSet

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Per-parameter moments plus step counter and hyperparameters.

    Example
    -------
    >>> state = AdamState(lr=1e-4)
    >>> state.t
    0
    """

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, config) -> "AdamState":
        return cls(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)

    def ensure_moments(self, params: ParamSet) -> None:
        """Create zero moments for new parameters; reject shape drift."""
        for name, tensor in params.items():
            for moments in (self.m, self.v):
                if name not in moments:
                    moments[name] = np.zeros_like(tensor.data)
                elif moments[name].shape != tensor.shape:
                    raise ShapeError(
                        f"optimizer moment for {name} has shape {moments[name].shape}, "
                        f"parameter has {tensor.shape}"
                    )


def adam_step(
    params: ParamSet,
    state: AdamState,
    grads: Mapping[str, np.ndarray] | None = None,
) -> AdamState:
    """Apply one Adam update in place and advance ``state.t`` by one.

    ``grads`` defaults to each parameter's ``.grad``; a parameter without a
    gradient is an error. Parameters and moments are written only after
    every update is known to be finite.
    """
    state.ensure_moments(params)
    resolved: dict[str, np.ndarray] = {}
    for name, tensor in params.items():
        grad = tensor.grad if grads is None else grads.get(name)
        if grad is None:
            raise AutogradError(f"no gradient for parameter {name}; run backward first")
        if grad.shape != tensor.shape:
            raise ShapeError(f"gradient for {name} has shape {grad.shape}, parameter has {tensor.shape}")
        resolved[name] = grad

    t: int = state.t + 1
    correction1: float = 1.0 - state.beta1**t
    correction2: float = 1.0 - state.beta2**t
    staged: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    for name, tensor in params.items():
        grad = np.asarray(resolved[name], dtype=tensor.data.dtype)
        m = state.m[name] * state.beta1
        m += (1.0 - state.beta1) * grad
        v = state.v[name] * state.beta2
        v += (1.0 - state.beta2) * grad * grad
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        new_value = tensor.data - update
        if not np.isfinite(new_value).all():
            raise NonFiniteError(f"adam update produced non-finite values in {name}")
        staged[name] = (m, v, np.ascontiguousarray(new_value, dtype=tensor.data.dtype))

    for name, tensor in params.items():
        m, v, new_value = staged[name]
        state.m[name][...] = m
        state.v[name][...] = v
        tensor.data = new_value
    state.t = t
    params.optimizer_state = state
    return state
