"""
Neural layers on top of the tensor engine.

Convolution is cross-correlation with zero padding, arbitrary stride and
per-axis dilation. The forward pass gathers dilated windows with
``sliding_window_view`` and contracts them against the kernel with
``tensordot``; the input gradient scatters back one kernel tap at a time.

Example
-------
>>> from backend.models.layers import Conv2dLayer, init_params, param_count
>>> layer = init_params(Conv2dLayer("demo", 3, 8, (3, 3), padding=(1, 1)), seed=0)
>>> param_count(layer)
224
"""

from __future__ import annotations

import logging
import math
from typing import Iterable, Protocol, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from backend.errors import ShapeError
from backend.models.params import ParamSet
from backend.models.tensor import (
    Tensor,
    apply_op,
    as_tensor,
    get_dtype,
    matmul,
    transpose2d,
)
from backend.utils.rng import derive_rng

logger = logging.getLogger(__name__)

Pair = tuple[int, int]


def _pair(value: int | Sequence[int]) -> Pair:
    if isinstance(value, int):
        return (value, value)
    first, second = value
    return (int(first), int(second))


class Conv2dLayer:
    """``C_out×C_in×k1×k2`` kernel with optional bias."""

    def __init__(
        self,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel: int | Sequence[int],
        stride: int | Sequence[int] = 1,
        padding: int | Sequence[int] = 0,
        dilation: int | Sequence[int] = 1,
        bias: bool = True,
    ) -> None:
        if in_channels < 1 or out_channels < 1:
            raise ShapeError(
                f"{name}: conv needs positive channel counts, got {in_channels}->{out_channels}"
            )
        self.name: str = name
        self.in_channels: int = int(in_channels)
        self.out_channels: int = int(out_channels)
        self.kernel: Pair = _pair(kernel)
        self.stride: Pair = _pair(stride)
        self.padding: Pair = _pair(padding)
        self.dilation: Pair = _pair(dilation)
        k1, k2 = self.kernel
        self.weight: Tensor = Tensor.zeros((out_channels, in_channels, k1, k2), True)
        self.bias: Tensor | None = Tensor.zeros((out_channels,), True) if bias else None

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel[0] * self.kernel[1]

    def output_shape(self, height: int, width: int) -> Pair:
        (k1, k2), (sh, sw), (ph, pw), (dh, dw) = (
            self.kernel,
            self.stride,
            self.padding,
            self.dilation,
        )
        return (
            (height + 2 * ph - dh * (k1 - 1) - 1) // sh + 1,
            (width + 2 * pw - dw * (k2 - 1) - 1) // sw + 1,
        )

    def tensors(self) -> list[tuple[str, Tensor]]:
        named = [(f"{self.name}.weight", self.weight)]
        if self.bias is not None:
            named.append((f"{self.name}.bias", self.bias))
        return named

    def register(self, params: ParamSet) -> "Conv2dLayer":
        for key, tensor in self.tensors():
            params.add(key, tensor)
        return self

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self)

    def __repr__(self) -> str:
        return (
            f"Conv2dLayer({self.name!r}, {self.in_channels}->{self.out_channels}, "
            f"k={self.kernel}, s={self.stride}, p={self.padding}, d={self.dilation})"
        )


class LinearLayer:
    """Fully-connected ``out×in`` weight plus bias."""

    def __init__(self, name: str, in_features: int, out_features: int) -> None:
        if in_features < 1 or out_features < 1:
            raise ShapeError(
                f"{name}: linear needs positive sizes, got {in_features}->{out_features}"
            )
        self.name: str = name
        self.in_features: int = int(in_features)
        self.out_features: int = int(out_features)
        self.weight: Tensor = Tensor.zeros((out_features, in_features), True)
        self.bias: Tensor = Tensor.zeros((out_features,), True)

    @property
    def fan_in(self) -> int:
        return self.in_features

    def tensors(self) -> list[tuple[str, Tensor]]:
        return [(f"{self.name}.weight", self.weight), (f"{self.name}.bias", self.bias)]

    def register(self, params: ParamSet) -> "LinearLayer":
        for key, tensor in self.tensors():
            params.add(key, tensor)
        return self

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self)


class HasTensors(Protocol):
    def tensors(self) -> list[tuple[str, Tensor]]: ...


# Forward ops


def conv2d(x: Tensor, layer: Conv2dLayer) -> Tensor:
    """Dilated, strided, zero-padded 2-D cross-correlation."""
    if x.ndim != 4:
        raise ShapeError(f"{layer.name}: conv2d needs N×C×H×W input, got {x.shape}")
    n, c, h, w = x.shape
    if c != layer.in_channels:
        raise ShapeError(f"{layer.name}: expected {layer.in_channels} input channels, got {c}")
    (k1, k2), (sh, sw), (ph, pw), (dh, dw) = (
        layer.kernel,
        layer.stride,
        layer.padding,
        layer.dilation,
    )
    span_h, span_w = dh * (k1 - 1) + 1, dw * (k2 - 1) + 1
    if span_h > h + 2 * ph or span_w > w + 2 * pw:
        raise ShapeError(
            f"{layer.name}: dilated kernel footprint {span_h}×{span_w} exceeds "
            f"padded input {h + 2 * ph}×{w + 2 * pw}"
        )
    out_h, out_w = layer.output_shape(h, w)

    padded = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    windows = sliding_window_view(padded, (span_h, span_w), axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw, ::dh, ::dw][:, :, :out_h, :out_w]
    weight = layer.weight.data
    # windows: N,C,Ho,Wo,k1,k2  ->  N,Ho,Wo,O
    out = np.tensordot(windows, weight, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if layer.bias is not None:
        out += layer.bias.data[None, :, None, None]

    inputs: list[Tensor] = [x, layer.weight]
    if layer.bias is not None:
        inputs.append(layer.bias)

    def backward(grad: np.ndarray) -> list[np.ndarray | None]:
        grads: list[np.ndarray | None] = [None, None]
        if x.requires_grad:
            cols = np.tensordot(grad, weight, axes=([1], [0]))  # N,Ho,Wo,C,k1,k2
            dpad = np.zeros_like(padded)
            for i in range(k1):
                for j in range(k2):
                    r0, c0 = i * dh, j * dw
                    dpad[
                        :,
                        :,
                        r0 : r0 + sh * (out_h - 1) + 1 : sh,
                        c0 : c0 + sw * (out_w - 1) + 1 : sw,
                    ] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            grads[0] = dpad[:, :, ph : ph + h, pw : pw + w]
        if layer.weight.requires_grad:
            grads[1] = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
        if layer.bias is not None:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return grads

    return apply_op("conv2d", out, inputs, backward)


POOL_KINDS: tuple[str, ...] = ("max", "avg")


def pool2d(kind: str, x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Max or average pooling over ``kernel×kernel`` windows."""
    if kind not in POOL_KINDS:
        raise ValueError(f"unknown pooling {kind!r}")
    stride = kernel if stride is None else stride
    if x.ndim != 4:
        raise ShapeError(f"pool2d needs N×C×H×W input, got {x.shape}")
    n, c, h, w = x.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"pool kernel {kernel} larger than input {h}×{w}")
    out_h, out_w = (h - kernel) // stride + 1, (w - kernel) // stride + 1
    windows = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[
        :, :, ::stride, ::stride
    ][:, :, :out_h, :out_w]
    flat = windows.reshape(n, c, out_h, out_w, kernel * kernel)

    if kind == "max":
        winners = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, winners[..., None], axis=-1)[..., 0]
    else:
        out = flat.mean(axis=-1)

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        if kind == "max":
            taps = np.zeros(flat.shape, dtype=grad.dtype)
            np.put_along_axis(taps, winners[..., None], grad[..., None], axis=-1)
        else:
            taps = np.broadcast_to(grad[..., None] / (kernel * kernel), flat.shape)
        taps = taps.reshape(n, c, out_h, out_w, kernel, kernel)
        dx = np.zeros_like(x.data)
        for i in range(kernel):
            for j in range(kernel):
                dx[
                    :,
                    :,
                    i : i + stride * (out_h - 1) + 1 : stride,
                    j : j + stride * (out_w - 1) + 1 : stride,
                ] += taps[..., i, j]
        return (dx,)

    return apply_op(f"{kind}pool2d", np.ascontiguousarray(out), (x,), backward)


def linear(x: Tensor, layer: LinearLayer) -> Tensor:
    """``x·Wᵀ + b`` for an N×in batch."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != layer.in_features:
        raise ShapeError(
            f"{layer.name}: expected N×{layer.in_features} input, got {x.shape}"
        )
    return matmul(x, transpose2d(layer.weight)) + layer.bias


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2× upsampling of an N×C×H×W map."""
    if x.ndim != 4:
        raise ShapeError(f"upsample2x needs N×C×H×W input, got {x.shape}")
    n, c, h, w = x.shape
    data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return apply_op("upsample2x", data, (x,), backward)


# Parameters


def init_params(layer: Conv2dLayer | LinearLayer, seed: int) -> Conv2dLayer | LinearLayer:
    """He-uniform weights in ±sqrt(6/fan_in), zero bias; keyed on (seed, layer name)."""
    rng = derive_rng(seed, f"init:{layer.name}")
    bound: float = math.sqrt(6.0 / layer.fan_in)
    values = rng.uniform(-bound, bound, size=layer.weight.shape)
    layer.weight.data = np.ascontiguousarray(values, dtype=get_dtype())
    layer.weight.grad = None
    if layer.bias is not None:
        layer.bias.data = np.zeros(layer.bias.shape, dtype=get_dtype())
        layer.bias.grad = None
    return layer


def param_count(item: HasTensors | ParamSet | Iterable[HasTensors]) -> int:
    """Exact number of learnable scalars in a layer, a block list or a ParamSet."""
    if isinstance(item, ParamSet):
        return item.count()
    if hasattr(item, "tensors"):
        return sum(t.size for _, t in item.tensors())
    return sum(param_count(part) for part in item)
