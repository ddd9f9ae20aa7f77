"""
Named central-difference checks over every differentiable op and block.

Each check reduces the op's output to a scalar with a fixed random
weighting, so every output coordinate contributes to the gradient, and
returns the worst relative error. Inputs to ReLU-like ops are kept away
from their kinks. The suite always runs in f64.

Example
-------
>>> from backend.models.gradcheck_suite import run_suite, worst_result
>>> results = run_suite(names=["add", "matmul"])
>>> worst_result(results).passed
True
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from backend.errors import GradCheckError
from backend.models.amm import AmmBlock
from backend.models.attention import RamBlock, SamBlock, csa_forward, ssa_forward
from backend.models.layers import Conv2dLayer, LinearLayer, conv2d, init_params, linear, pool2d, upsample2x
from backend.models.net_config import NetConfig
from backend.models.saccn import SaccnModel
from backend.models.tensor import (
    Tensor,
    activation,
    concat,
    elementwise,
    grad_check,
    grad_check_leaf,
    matmul,
    precision,
    reduce,
    reshape,
    softmax,
    transpose2d,
)
from backend.models.trainer import mse_loss
from backend.utils.rng import derive_rng

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE: float = 1e-4
NETWORK_SIZE: int = 32
NETWORK_COORDS: int = 12


@dataclass
class CheckResult:
    name: str
    error: float
    seconds: float
    tolerance: float = GRADCHECK_TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tolerance)


Check = Callable[[np.random.Generator], float]


def _normal(rng: np.random.Generator, *shape: int, scale: float = 1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape))


def _away_from_zero(rng: np.random.Generator, *shape: int) -> Tensor:
    """Values in ±[0.1, 1.1], clear of ReLU's kink."""
    signs = rng.choice([-1.0, 1.0], size=shape)
    return Tensor(signs * (0.1 + rng.random(shape)))


def _distinct(rng: np.random.Generator, *shape: int) -> Tensor:
    """A shuffled, well-separated grid of values so maxima are unique."""
    size = int(np.prod(shape))
    return Tensor(rng.permutation(np.linspace(-1.0, 1.0, size)).reshape(shape))


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return (out * Tensor(weights)).sum()


def _op_check(rng: np.random.Generator, x: Tensor, fn: Callable[[Tensor], Tensor], **kw) -> float:
    weights = rng.normal(size=fn(x).shape)
    return grad_check(lambda t: _weighted(fn(t), weights), x, **kw)


def _input_and_params_check(
    rng: np.random.Generator,
    x: Tensor,
    fn: Callable[[Tensor], Tensor],
    tensors: list[tuple[str, Tensor]],
    **kw,
) -> float:
    """Worst error over the input and every listed parameter.

    Parameters are jittered first so zero biases do not hide errors.
    """
    for _, tensor in tensors:
        tensor.data = tensor.data + rng.normal(0.0, 0.1, size=tensor.shape)
    weights = rng.normal(size=fn(x).shape)
    errors = [grad_check(lambda t: _weighted(fn(t), weights), x, **kw)]
    for _, tensor in tensors:
        errors.append(grad_check_leaf(lambda: _weighted(fn(x), weights), tensor, **kw))
    return max(errors)


def _layer_check(rng: np.random.Generator, x: Tensor, layer, fn: Callable[[Tensor], Tensor], **kw) -> float:
    init_params(layer, seed=int(rng.integers(0, 2**31)))
    return _input_and_params_check(rng, x, fn, layer.tensors(), **kw)


def _block_check(rng: np.random.Generator, x: Tensor, block, **kw) -> float:
    block.initialize(int(rng.integers(0, 2**31)))
    return _input_and_params_check(rng, x, block, block.tensors(), **kw)


# Elementwise and linear algebra


def check_add(rng: np.random.Generator) -> float:
    b = _normal(rng, 3, 1)
    return _op_check(rng, _normal(rng, 2, 3, 4), lambda t: elementwise("add", t, b))


def check_sub(rng: np.random.Generator) -> float:
    a = _normal(rng, 2, 3, 4)
    return max(
        _op_check(rng, _normal(rng, 4), lambda t: elementwise("sub", a, t)),
        _op_check(rng, _normal(rng, 2, 3, 4), lambda t: elementwise("sub", t, a)),
    )


def check_mul(rng: np.random.Generator) -> float:
    a = _normal(rng, 2, 3, 4)
    return max(
        _op_check(rng, _normal(rng, 3, 1), lambda t: elementwise("mul", a, t)),
        _op_check(rng, _normal(rng, 2, 3, 4), lambda t: elementwise("mul", t, a)),
    )


def check_matmul(rng: np.random.Generator) -> float:
    b = _normal(rng, 4, 5)
    a = _normal(rng, 3, 4)
    return max(
        _op_check(rng, _normal(rng, 3, 4), lambda t: matmul(t, b)),
        _op_check(rng, _normal(rng, 4, 5), lambda t: matmul(a, t)),
    )


def check_matmul_batched(rng: np.random.Generator) -> float:
    b = _normal(rng, 2, 4, 3)
    return _op_check(rng, _normal(rng, 2, 5, 4), lambda t: matmul(t, b))


def check_softmax(rng: np.random.Generator) -> float:
    return max(
        _op_check(rng, _normal(rng, 2, 4, 5), lambda t: softmax(t, axis=1)),
        _op_check(rng, _normal(rng, 2, 4, 5), lambda t: softmax(t, axis=2)),
    )


def check_relu(rng: np.random.Generator) -> float:
    return _op_check(rng, _away_from_zero(rng, 2, 3, 4, 4), lambda t: activation("relu", t))


def check_sigmoid(rng: np.random.Generator) -> float:
    return _op_check(rng, _normal(rng, 2, 3, 4, 4), lambda t: activation("sigmoid", t))


def check_reduce_mean(rng: np.random.Generator) -> float:
    return _op_check(rng, _normal(rng, 2, 3, 4, 4), lambda t: reduce("mean", t, (2, 3)))


def check_reduce_sum(rng: np.random.Generator) -> float:
    return _op_check(rng, _normal(rng, 2, 3, 4, 4), lambda t: reduce("sum", t, 1))


def check_reduce_max(rng: np.random.Generator) -> float:
    return max(
        _op_check(rng, _distinct(rng, 2, 3, 4, 4), lambda t: reduce("max", t, (2, 3))),
        _op_check(rng, _distinct(rng, 2, 3, 4, 4), lambda t: reduce("max", t, 1)),
    )


def check_reshape(rng: np.random.Generator) -> float:
    return _op_check(rng, _normal(rng, 2, 3, 4), lambda t: reshape(t, (6, 4)))


def check_transpose(rng: np.random.Generator) -> float:
    return _op_check(rng, _normal(rng, 2, 3, 4), transpose2d)


def check_concat(rng: np.random.Generator) -> float:
    other = _normal(rng, 2, 2, 3, 3)
    return _op_check(rng, _normal(rng, 2, 3, 3, 3), lambda t: concat([t, other, t], axis=1))


# Layers


def check_conv2d(rng: np.random.Generator) -> float:
    layer = Conv2dLayer("check.conv", 3, 4, (3, 3), padding=(1, 1))
    return _layer_check(rng, _normal(rng, 2, 3, 6, 6), layer, lambda t: conv2d(t, layer))


def check_conv2d_strided(rng: np.random.Generator) -> float:
    layer = Conv2dLayer("check.conv_strided", 2, 3, (3, 3), stride=(2, 2), padding=(1, 1))
    return _layer_check(rng, _normal(rng, 1, 2, 7, 7), layer, lambda t: conv2d(t, layer))


def check_conv2d_dilated(rng: np.random.Generator) -> float:
    layer = Conv2dLayer("check.conv_dilated", 2, 3, (1, 5), padding=(0, 4), dilation=(1, 2))
    return _layer_check(rng, _normal(rng, 1, 2, 5, 6), layer, lambda t: conv2d(t, layer))


def check_linear(rng: np.random.Generator) -> float:
    layer = LinearLayer("check.fc", 5, 3)
    return _layer_check(rng, _normal(rng, 4, 5), layer, lambda t: linear(t, layer))


def check_max_pool(rng: np.random.Generator) -> float:
    return _op_check(rng, _distinct(rng, 2, 2, 8, 8), lambda t: pool2d("max", t, 2))


def check_avg_pool(rng: np.random.Generator) -> float:
    return _op_check(rng, _normal(rng, 2, 2, 8, 8), lambda t: pool2d("avg", t, 4, 4))


def check_upsample(rng: np.random.Generator) -> float:
    return _op_check(rng, _normal(rng, 2, 2, 3, 3), upsample2x)


def check_mse_loss(rng: np.random.Generator) -> float:
    gt = _normal(rng, 2, 1, 4, 4)
    return grad_check(lambda t: mse_loss(t, gt), _normal(rng, 2, 1, 4, 4))


# Blocks


def check_ram(rng: np.random.Generator) -> float:
    block = RamBlock("check.ram", 4, 2)
    return _block_check(rng, _normal(rng, 1, 4, 6, 6), block)


def check_ram_channel(rng: np.random.Generator) -> float:
    block = RamBlock("check.ram_channel", 4, 2, mode="channel")
    return _block_check(rng, _normal(rng, 1, 4, 6, 6), block)


def check_ram_spatial(rng: np.random.Generator) -> float:
    block = RamBlock("check.ram_spatial", 4, 2, mode="spatial")
    return _block_check(rng, _normal(rng, 1, 4, 6, 6), block)


def check_ssa(rng: np.random.Generator) -> float:
    block = SamBlock("check.ssa", 4, 2).initialize(int(rng.integers(0, 2**31)))
    ssa_tensors = [item for layer in block.ssa_layers for item in layer.tensors()]
    x = _normal(rng, 1, 4, 5, 5, scale=0.5)
    return _input_and_params_check(rng, x, lambda t: ssa_forward(t, block), ssa_tensors)


def check_csa(rng: np.random.Generator) -> float:
    return _op_check(rng, _normal(rng, 1, 4, 5, 5, scale=0.3), csa_forward)


def check_sam(rng: np.random.Generator) -> float:
    block = SamBlock("check.sam", 4, 2)
    return _block_check(rng, _normal(rng, 1, 4, 5, 5, scale=0.3), block)


def check_sam_spatial(rng: np.random.Generator) -> float:
    block = SamBlock("check.sam_spatial", 4, 2, mode="spatial")
    return _block_check(rng, _normal(rng, 1, 4, 5, 5, scale=0.3), block)


def check_sam_channel(rng: np.random.Generator) -> float:
    block = SamBlock("check.sam_channel", 4, 2, mode="channel")
    return _block_check(rng, _normal(rng, 1, 4, 5, 5, scale=0.3), block)


def check_amm(rng: np.random.Generator) -> float:
    block = AmmBlock("check.amm", 4, 4)
    return _block_check(rng, _normal(rng, 1, 4, 7, 9), block)


def check_amm_square(rng: np.random.Generator) -> float:
    block = AmmBlock("check.amm_square", 4, 4, square=True)
    return _block_check(rng, _normal(rng, 1, 4, 7, 9), block)


def _network(rng: np.random.Generator) -> tuple[SaccnModel, Tensor, np.ndarray]:
    model = SaccnModel.build(NetConfig(base_width=2, seed=int(rng.integers(0, 2**31))))
    x = Tensor(rng.random((1, 3, NETWORK_SIZE, NETWORK_SIZE)))
    weights = rng.normal(size=(1, 1, NETWORK_SIZE, NETWORK_SIZE)) / NETWORK_SIZE**2
    return model, x, weights


def check_network_sam(rng: np.random.Generator) -> float:
    model, x, weights = _network(rng)
    leaf = model.sam.ssa_value.weight
    return grad_check_leaf(
        lambda: _weighted(model(x), weights), leaf, 1e-5,
        max_coords=NETWORK_COORDS, seed=1,
    )


def check_network_conv2_2(rng: np.random.Generator) -> float:
    model, x, weights = _network(rng)
    leaf = model.params["conv2_2.weight"]
    return grad_check_leaf(
        lambda: _weighted(model(x), weights), leaf, 1e-5,
        max_coords=NETWORK_COORDS, seed=2,
    )


CHECKS: dict[str, Check] = {
    "add": check_add,
    "sub": check_sub,
    "mul": check_mul,
    "matmul": check_matmul,
    "matmul_batched": check_matmul_batched,
    "softmax": check_softmax,
    "relu": check_relu,
    "sigmoid": check_sigmoid,
    "reduce_mean": check_reduce_mean,
    "reduce_sum": check_reduce_sum,
    "reduce_max": check_reduce_max,
    "reshape": check_reshape,
    "transpose": check_transpose,
    "concat": check_concat,
    "conv2d": check_conv2d,
    "conv2d_strided": check_conv2d_strided,
    "conv2d_dilated": check_conv2d_dilated,
    "linear": check_linear,
    "max_pool": check_max_pool,
    "avg_pool": check_avg_pool,
    "upsample": check_upsample,
    "mse_loss": check_mse_loss,
    "ram": check_ram,
    "ram_channel": check_ram_channel,
    "ram_spatial": check_ram_spatial,
    "ssa": check_ssa,
    "csa": check_csa,
    "sam": check_sam,
    "sam_spatial": check_sam_spatial,
    "sam_channel": check_sam_channel,
    "amm": check_amm,
    "amm_square": check_amm_square,
    "network.sam": check_network_sam,
    "network.conv2_2": check_network_conv2_2,
}


def run_suite(
    seed: int = 0,
    names: Iterable[str] | None = None,
    tolerance: float = GRADCHECK_TOLERANCE,
) -> list[CheckResult]:
    """Run the named checks (all by default) in f64 and collect their errors."""
    selected = list(CHECKS) if names is None else list(names)
    unknown = [name for name in selected if name not in CHECKS]
    if unknown:
        raise KeyError(f"unknown gradient checks: {', '.join(unknown)}")
    results: list[CheckResult] = []
    with precision("f64"):
        for name in selected:
            started = time.perf_counter()
            error = CHECKS[name](derive_rng(seed, f"gradcheck:{name}"))
            result = CheckResult(name, float(error), time.perf_counter() - started, tolerance)
            logger.info("gradcheck %-16s error=%.3e %s", name, result.error, "ok" if result.passed else "FAIL")
            results.append(result)
    return results


def worst_result(results: list[CheckResult]) -> CheckResult:
    if not results:
        raise GradCheckError("no gradient checks were run")
    return max(results, key=lambda r: r.error if np.isfinite(r.error) else np.inf)
