"""
Asymmetric multi-scale module.

Three parallel branches over the same input: a 1×1 conv, and for k = 3, 5
the sum of a dilated 1×k and a dilated k×1 conv. Dilation 2 is applied on
the kernel's long axis and the padding keeps the spatial extent. Branch
outputs are concatenated along channels and fused by a 1×1 conv.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Any

from backend.errors import ShapeError
from backend.models.layers import Conv2dLayer, init_params
from backend.models.params import ParamSet
from backend.models.tensor import Tensor, concat

DILATION: int = 2
ASYMMETRIC_KERNELS: tuple[int, ...] = (3, 5)


class AmmBlock:
    """Branch set {1×1, (1×3 + 3×1), (1×5 + 5×1)} with width ``C_b = C_out``."""

    def __init__(self, name: str, in_channels: int, out_channels: int, square: bool = False) -> None:
        self.name: str = name
        self.in_channels: int = int(in_channels)
        self.out_channels: int = int(out_channels)
        branch: int = self.out_channels
        self.branch_channels: int = branch
        self.square: bool = bool(square)
        self.branch_1x1 = Conv2dLayer(f"{name}.b1", in_channels, branch, (1, 1))
        self.branches: dict[int, tuple[Conv2dLayer, ...]] = {}
        for k in ASYMMETRIC_KERNELS:
            pad: int = DILATION * (k - 1) // 2
            if self.square:
                self.branches[k] = (
                    Conv2dLayer(
                        f"{name}.b{k}.{k}x{k}",
                        in_channels,
                        branch,
                        (k, k),
                        padding=(pad, pad),
                        dilation=(DILATION, DILATION),
                    ),
                )
                continue
            row = Conv2dLayer(
                f"{name}.b{k}.1x{k}",
                in_channels,
                branch,
                (1, k),
                padding=(0, pad),
                dilation=(1, DILATION),
            )
            col = Conv2dLayer(
                f"{name}.b{k}.{k}x1",
                in_channels,
                branch,
                (k, 1),
                padding=(pad, 0),
                dilation=(DILATION, 1),
            )
            self.branches[k] = (row, col)
        self.fuse = Conv2dLayer(f"{name}.fuse", branch * (1 + len(ASYMMETRIC_KERNELS)), out_channels, (1, 1))

    @property
    def branch_3(self) -> tuple[Conv2dLayer, ...]:
        return self.branches[3]

    @property
    def branch_5(self) -> tuple[Conv2dLayer, ...]:
        return self.branches[5]

    def layers(self) -> list[Conv2dLayer]:
        out: list[Conv2dLayer] = [self.branch_1x1]
        for convs in self.branches.values():
            out.extend(convs)
        out.append(self.fuse)
        return out

    def tensors(self) -> list[tuple[str, Tensor]]:
        return [item for layer in self.layers() for item in layer.tensors()]

    def initialize(self, seed: int) -> "AmmBlock":
        for layer in self.layers():
            init_params(layer, seed)
        return self

    def register(self, params: ParamSet) -> "AmmBlock":
        for layer in self.layers():
            layer.register(params)
        return self

    def __call__(self, x: Tensor) -> Tensor:
        return amm_forward(x, self)


def amm_branches(x: Tensor, block: AmmBlock) -> list[Tensor]:
    """Per-branch outputs before concatenation, 1×1 branch first."""
    if x.ndim != 4:
        raise ShapeError(f"{block.name}: expected N×C×H×W input, got {x.shape}")
    if x.shape[1] != block.in_channels:
        raise ShapeError(
            f"{block.name}: expected {block.in_channels} input channels, got {x.shape[1]}"
        )
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError(f"{block.name}: empty spatial extent {x.shape[2:]}")
    outputs: list[Tensor] = [block.branch_1x1(x)]
    for convs in block.branches.values():
        summed = convs[0](x)
        for conv in convs[1:]:
            summed = summed + conv(x)
        outputs.append(summed)
    return outputs


def amm_forward(x: Tensor, block: AmmBlock) -> Tensor:
    return block.fuse(concat(amm_branches(x, block), axis=1))


def amm_cost_report(block: AmmBlock) -> dict[str, Any]:
    """Weight counts of each asymmetric pair against its k×k equivalent.

    Biases are excluded so the comparison is exactly ``2k : k²``; a
    square block reports ratio 1.
    """
    branches: dict[int, dict[str, Any]] = {}
    total_asym: int = 0
    total_square: int = 0
    for k, convs in block.branches.items():
        asym: int = sum(conv.weight.size for conv in convs)
        square: int = k * k * block.in_channels * block.branch_channels
        branches[k] = {
            "params_asymmetric": asym,
            "params_square_equivalent": square,
            "ratio": Fraction(asym, square),
        }
        total_asym += asym
        total_square += square
    return {
        "branches": branches,
        "params_asymmetric": total_asym,
        "params_square_equivalent": total_square,
        "ratio": Fraction(total_asym, total_square),
    }
