"""
Regional and semantic attention blocks.

* RAM: channel gate from globally avg/max pooled features through a shared
  two-layer MLP, followed by a spatial gate from a 3×3 convolution over the
  channel-wise avg/max maps. Both gates lie in (0, 1).
* SSA: non-local attention over spatial positions with a residual add.
* CSA: attention over channels computed from the feature Gram matrix, also
  residual.
* SAM: SSA and CSA run side by side on the same input, summed, then fused
  by a 1×1 convolution.

Both blocks take a ``mode`` that keeps only one of their halves:
RAM ``"channel"`` or ``"spatial"``, SAM ``"spatial"`` or ``"channel"``.

Example
-------
>>> import numpy as np
>>> from backend.models.attention import RamBlock, ram_forward
>>> from backend.models.tensor import Tensor
>>> block = RamBlock("ram", channels=8, reduction=4).initialize(seed=0)
>>> ram_forward(Tensor(np.ones((1, 8, 4, 4))), block).shape
(1, 8, 4, 4)
"""

from __future__ import annotations

from typing import NamedTuple

from backend.errors import ShapeError
from backend.models.layers import Conv2dLayer, LinearLayer, init_params
from backend.models.net_config import RAM_MODES, SAM_MODES
from backend.models.params import ParamSet
from backend.models.tensor import Tensor, concat, matmul, softmax


class RamTrace(NamedTuple):
    """Intermediate maps of one RAM pass; a gate is None when its half is off."""

    s_a: Tensor | None  # N×C×1×1 channel gate
    x_c: Tensor
    s_b: Tensor | None  # N×1×H×W spatial gate
    x_s: Tensor


class RamBlock:
    """Regional attention: shared FC pair plus a 2→1 3×3 spatial conv."""

    def __init__(self, name: str, channels: int, reduction: int = 4, mode: str = "full") -> None:
        if reduction < 1:
            raise ShapeError(f"{name}: reduction must be >= 1, got {reduction}")
        if mode not in RAM_MODES:
            raise ValueError(f"{name}: unknown RAM mode {mode!r}")
        hidden: int = max(1, channels // reduction)
        self.name: str = name
        self.channels: int = int(channels)
        self.reduction: int = int(reduction)
        self.mode: str = mode
        self.fc1: LinearLayer | None = None
        self.fc2: LinearLayer | None = None
        self.spatial_conv: Conv2dLayer | None = None
        if mode != "spatial":
            self.fc1 = LinearLayer(f"{name}.fc1", channels, hidden)
            self.fc2 = LinearLayer(f"{name}.fc2", hidden, channels)
        if mode != "channel":
            self.spatial_conv = Conv2dLayer(f"{name}.spatial", 2, 1, (3, 3), padding=(1, 1))

    def layers(self) -> list[Conv2dLayer | LinearLayer]:
        return [layer for layer in (self.fc1, self.fc2, self.spatial_conv) if layer is not None]

    def tensors(self) -> list[tuple[str, Tensor]]:
        return [item for layer in self.layers() for item in layer.tensors()]

    def initialize(self, seed: int) -> "RamBlock":
        for layer in self.layers():
            init_params(layer, seed)
        return self

    def register(self, params: ParamSet) -> "RamBlock":
        for layer in self.layers():
            layer.register(params)
        return self

    def __call__(self, x: Tensor) -> Tensor:
        return ram_forward(x, self)


def _shared_mlp(pooled: Tensor, block: RamBlock) -> Tensor:
    n, c = pooled.shape[0], pooled.shape[1]
    flat = pooled.reshape(n, c)
    return block.fc2(block.fc1(flat).relu())


def ram_attention(x: Tensor, block: RamBlock) -> RamTrace:
    """Run RAM and keep the gates for inspection."""
    if x.ndim != 4:
        raise ShapeError(f"{block.name}: expected N×C×H×W input, got {x.shape}")
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError(f"{block.name}: spatial extent must be >= 1, got {h}×{w}")
    if c != block.channels:
        raise ShapeError(f"{block.name}: expected {block.channels} channels, got {c}")

    s_a: Tensor | None = None
    x_c = x
    if block.fc1 is not None:
        f_avg = _shared_mlp(x.mean((2, 3)), block)
        f_max = _shared_mlp(x.max((2, 3)), block)
        s_a = (f_avg + f_max).sigmoid().reshape(n, c, 1, 1)
        x_c = x * s_a
    if block.spatial_conv is None:
        return RamTrace(s_a=s_a, x_c=x_c, s_b=None, x_s=x_c)

    y_s = concat([x_c.mean(1), x_c.max(1)], axis=1)
    s_b = block.spatial_conv(y_s).sigmoid()
    return RamTrace(s_a=s_a, x_c=x_c, s_b=s_b, x_s=x_c * s_b)


def ram_forward(x: Tensor, block: RamBlock) -> Tensor:
    return ram_attention(x, block).x_s


class SamBlock:
    """Semantic attention: SSA query/key/value convs plus a 1×1 fusion conv.

    In ``"channel"`` mode the SSA convs are not built; CSA has no weights.
    """

    def __init__(self, name: str, channels: int, reduction: int = 8, mode: str = "both") -> None:
        if reduction < 1:
            raise ShapeError(f"{name}: reduction must be >= 1, got {reduction}")
        if mode not in SAM_MODES:
            raise ValueError(f"{name}: unknown SAM mode {mode!r}")
        inner: int = max(1, channels // reduction)
        self.name: str = name
        self.channels: int = int(channels)
        self.inner_channels: int = inner
        self.mode: str = mode
        self.ssa_layers: list[Conv2dLayer] = []
        if mode != "channel":
            self.ssa_query = Conv2dLayer(f"{name}.query", channels, inner, (1, 1))
            self.ssa_key = Conv2dLayer(f"{name}.key", channels, inner, (1, 1))
            self.ssa_value = Conv2dLayer(f"{name}.value", channels, channels, (1, 1))
            self.ssa_layers = [self.ssa_query, self.ssa_key, self.ssa_value]
        self.fusion = Conv2dLayer(f"{name}.fusion", channels, channels, (1, 1))

    def layers(self) -> list[Conv2dLayer]:
        return [*self.ssa_layers, self.fusion]

    def tensors(self) -> list[tuple[str, Tensor]]:
        return [item for layer in self.layers() for item in layer.tensors()]

    def initialize(self, seed: int) -> "SamBlock":
        for layer in self.layers():
            init_params(layer, seed)
        return self

    def register(self, params: ParamSet) -> "SamBlock":
        for layer in self.layers():
            layer.register(params)
        return self

    def __call__(self, x: Tensor) -> Tensor:
        return sam_forward(x, self)


class SelfAttentionTrace(NamedTuple):
    weights: Tensor  # W_s (N×HW×HW) or W_c (N×C×C)
    output: Tensor


def ssa_attention(x: Tensor, block: SamBlock) -> SelfAttentionTrace:
    """Spatial self-attention; column j of W_s holds position j's source weights."""
    if x.ndim != 4:
        raise ShapeError(f"{block.name}: expected N×C×H×W input, got {x.shape}")
    if not block.ssa_layers:
        raise ValueError(f"{block.name}: SSA is not built in {block.mode!r} mode")
    n, c, h, w = x.shape
    if h * w < 1:
        raise ShapeError(f"{block.name}: SSA needs at least one position")
    hw = h * w
    c1 = block.inner_channels

    x1 = block.ssa_query(x).reshape(n, c1, hw).transpose2d()  # N×HW×C1
    x2 = block.ssa_key(x).reshape(n, c1, hw)  # N×C1×HW
    w_s = softmax(matmul(x1, x2), axis=1)  # N×HW×HW, columns sum to 1
    x3 = block.ssa_value(x).reshape(n, c, hw)  # N×C×HW
    out = x + matmul(x3, w_s).reshape(n, c, h, w)
    return SelfAttentionTrace(weights=w_s, output=out)


def ssa_forward(x: Tensor, block: SamBlock) -> Tensor:
    return ssa_attention(x, block).output


def csa_attention(x: Tensor) -> SelfAttentionTrace:
    """Channel self-attention; rows of W_c sum to 1 and mix X4 as W_c⊙X4."""
    if x.ndim != 4:
        raise ShapeError(f"CSA: expected N×C×H×W input, got {x.shape}")
    n, c, h, w = x.shape
    x4 = x.reshape(n, c, h * w)  # N×C×HW
    x5 = x4.transpose2d()  # N×HW×C
    w_c = softmax(matmul(x4, x5), axis=2)  # N×C×C
    out = x + matmul(w_c, x4).reshape(n, c, h, w)
    return SelfAttentionTrace(weights=w_c, output=out)


def csa_forward(x: Tensor) -> Tensor:
    return csa_attention(x).output


def sam_forward(x: Tensor, block: SamBlock) -> Tensor:
    """fusion(SSA(x) + CSA(x)), or fusion of the one branch the mode keeps."""
    if x.ndim != 4 or x.shape[1] != block.channels:
        raise ShapeError(f"{block.name}: expected N×{block.channels}×H×W input, got {x.shape}")
    if block.mode == "spatial":
        return block.fusion(ssa_forward(x, block))
    if block.mode == "channel":
        return block.fusion(csa_forward(x))
    return block.fusion(ssa_forward(x, block) + csa_forward(x))
