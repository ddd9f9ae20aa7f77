"""
Dense tensor engine with reverse-mode automatic differentiation.

Tensors hold contiguous row-major numpy buffers of up to four extents
(N, C, H, W). Every differentiable op validates its operands, checks that
the forward result is finite, and, when a :class:`Tape` is active and an
operand requires gradients, records a backward rule on that tape. Replaying
the tape in reverse once populates ``.grad`` on the leaves.

Precision (``"f32"`` for training, ``"f64"`` for verification) and the
active tape are both held in ``contextvars`` so independent units of work
never share mutable engine state.

Example
-------
>>> from backend.models.tensor import Tape, Tensor, precision
>>> with precision("f64"), Tape() as tape:
...     x = Tensor([1.0, 2.0], requires_grad=True)
...     loss = (x * x).sum()
...     tape.backward(loss)
>>> x.grad.tolist()
[2.0, 4.0]
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from backend.errors import (
    AutogradError,
    GradCheckError,
    NonFiniteError,
    ShapeError,
)
from backend.utils.rng import derive_rng

logger = logging.getLogger(__name__)

MAX_RANK: int = 4

_DTYPES: dict[str, type[np.floating]] = {"f32": np.float32, "f64": np.float64}
_precision: ContextVar[str] = ContextVar("saccn_precision", default="f32")
_active_tape: ContextVar["Tape | None"] = ContextVar("saccn_tape", default=None)

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


# Precision and tape scoping


def set_precision(mode: str) -> None:
    """Select ``"f32"`` or ``"f64"`` for tensors created in this context."""
    if mode not in _DTYPES:
        raise ValueError(f"precision must be one of {sorted(_DTYPES)}, got {mode!r}")
    _precision.set(mode)


def get_precision() -> str:
    return _precision.get()


def get_dtype() -> type[np.floating]:
    return _DTYPES[_precision.get()]


@contextmanager
def precision(mode: str) -> Iterator[None]:
    """Temporarily switch precision inside a ``with`` block."""
    if mode not in _DTYPES:
        raise ValueError(f"precision must be one of {sorted(_DTYPES)}, got {mode!r}")
    token = _precision.set(mode)
    try:
        yield
    finally:
        _precision.reset(token)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording, even inside an active tape."""
    token = _active_tape.set(None)
    try:
        yield
    finally:
        _active_tape.reset(token)


def active_tape() -> "Tape | None":
    return _active_tape.get()


# Tape


@dataclass(eq=False)
class TapeEntry:
    """One recorded op: inputs, output and the rule mapping dOut to dInputs."""

    op: str
    inputs: tuple["Tensor", ...]
    output: "Tensor"
    backward_fn: BackwardFn
    index: int
    tape: "Tape"


class Tape:
    """Ordered record of differentiable ops, replayed once by :meth:`backward`.

    Entries are appended in execution order, so every entry's inputs were
    produced by earlier entries (or are leaves). ``rng_seed`` keys any
    stochastic choice made while the tape is in use.
    """

    def __init__(self, rng_seed: int = 0) -> None:
        self.rng_seed: int = int(rng_seed)
        self.__entries: list[TapeEntry] = []
        self.__leaves: dict[int, Tensor] = {}
        self.__consumed: bool = False
        self.__tokens: list = []

    def __enter__(self) -> "Tape":
        self.__tokens.append(_active_tape.set(self))
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _active_tape.reset(self.__tokens.pop())
        return False

    def __len__(self) -> int:
        return len(self.__entries)

    @property
    def entries(self) -> tuple[TapeEntry, ...]:
        return tuple(self.__entries)

    @property
    def consumed(self) -> bool:
        return self.__consumed

    def rng(self, purpose: str, index: int = 0) -> np.random.Generator:
        """Generator derived from this tape's seed."""
        return derive_rng(self.rng_seed, purpose, index)

    def record(
        self,
        op: str,
        output: "Tensor",
        inputs: Sequence["Tensor"],
        backward_fn: BackwardFn,
    ) -> None:
        """Append an op; called by :func:`apply_op`, not by user code."""
        if self.__consumed:
            raise AutogradError("cannot record on a replayed tape; call reset() first")
        entry = TapeEntry(op, tuple(inputs), output, backward_fn, len(self.__entries), self)
        for tensor in entry.inputs:
            if tensor.requires_grad and not self.__is_local(tensor):
                self.__leaves[id(tensor)] = tensor
        output.node = entry
        self.__entries.append(entry)

    def backward(self, loss: "Tensor", targets: Iterable["Tensor"] | None = None) -> None:
        """Populate ``.grad`` on leaves with dLoss/dLeaf.

        Leaf gradients accumulate across tapes until ``zero_grad()``. With
        ``targets`` only the listed leaves are written. Leaves recorded on
        the tape but unreachable from ``loss`` receive zeros.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        entry = loss.node
        if entry is None or entry.tape is not self:
            raise AutogradError("loss is detached from this tape")
        if self.__consumed:
            raise AutogradError("tape already replayed; call reset() before another backward pass")

        target_list: list[Tensor] | None = None if targets is None else list(targets)
        wanted: set[int] | None = (
            None if target_list is None else {id(t) for t in target_list}
        )
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

        for item in reversed(self.__entries[: entry.index + 1]):
            upstream = grads.pop(id(item.output), None)
            if upstream is None:
                continue
            for tensor, grad in zip(item.inputs, item.backward_fn(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if self.__is_local(tensor):
                    grads[key] = grad if key not in grads else grads[key] + grad
                elif wanted is None or key in wanted:
                    tensor.accumulate_grad(grad)

        self.__consumed = True
        fill: Iterable[Tensor] = (
            self.__leaves.values() if target_list is None else target_list
        )
        for leaf in fill:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)

    def reset(self) -> None:
        """Drop all entries so the tape can record a fresh graph."""
        for entry in self.__entries:
            entry.output.node = None
        self.__entries.clear()
        self.__leaves.clear()
        self.__consumed = False

    def __is_local(self, tensor: "Tensor") -> bool:
        return tensor.node is not None and tensor.node.tape is self


# Tensor


class Tensor:
    """N-d (rank <= 4) numeric array participating in a tape."""

    def __init__(self, data: object, requires_grad: bool = False) -> None:
        arr: np.ndarray = np.array(data, dtype=get_dtype())
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"tensors have at most {MAX_RANK} extents, got shape {arr.shape}")
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.requires_grad: bool = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: TapeEntry | None = None

    @classmethod
    def from_array(cls, data: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Wrap an array in the active precision without an extra copy."""
        out = cls.__new__(cls)
        arr = np.ascontiguousarray(data, dtype=get_dtype())
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"tensors have at most {MAX_RANK} extents, got shape {arr.shape}")
        out.data = arr
        out.requires_grad = bool(requires_grad)
        out.grad = None
        out.node = None
        return out

    @classmethod
    def zeros(cls, shape: Sequence[int], requires_grad: bool = False) -> "Tensor":
        return cls.from_array(np.zeros(tuple(shape), dtype=get_dtype()), requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match tensor {self.shape}")
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def backward(self, targets: Iterable["Tensor"] | None = None) -> None:
        if self.node is None:
            raise AutogradError("loss is detached: no tape recorded this tensor")
        self.node.tape.backward(self, targets)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operators
    def __add__(self, other: object) -> "Tensor":
        return _commutative("add", self, other)

    __radd__ = __add__

    def __mul__(self, other: object) -> "Tensor":
        return _commutative("mul", self, other)

    __rmul__ = __mul__

    def __sub__(self, other: object) -> "Tensor":
        return elementwise("sub", self, other)

    def __rsub__(self, other: object) -> "Tensor":
        return elementwise("add", -self, other)

    def __neg__(self) -> "Tensor":
        return elementwise("mul", self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    # method forms
    def relu(self) -> "Tensor":
        return activation("relu", self)

    def sigmoid(self) -> "Tensor":
        return activation("sigmoid", self)

    def softmax(self, axis: int) -> "Tensor":
        return softmax(self, axis)

    def sum(self, axes: Sequence[int] | int | None = None) -> "Tensor":
        return reduce("sum", self, axes)

    def mean(self, axes: Sequence[int] | int | None = None) -> "Tensor":
        return reduce("mean", self, axes)

    def max(self, axes: Sequence[int] | int | None = None) -> "Tensor":
        return reduce("max", self, axes)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose2d(self) -> "Tensor":
        return transpose2d(self)


# Op plumbing


def apply_op(
    op: str,
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: BackwardFn,
) -> Tensor:
    """Wrap a forward result, check finiteness and record it on the tape."""
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values (output shape {tuple(data.shape)})")
    tape = _active_tape.get()
    needs_grad: bool = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.from_array(data, requires_grad=needs_grad)
    if needs_grad:
        tape.record(op, out, inputs, backward_fn)
    return out


def as_tensor(value: object) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra: int = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _normalize_axes(axes: Sequence[int] | int | None, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    resolved: list[int] = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise ShapeError(f"axis {axis} out of range for rank {ndim}")
        resolved.append(axis % ndim)
    if len(set(resolved)) != len(resolved):
        raise ShapeError(f"reduction axes must be distinct, got {tuple(axes)}")
    return tuple(sorted(resolved))


# Differentiable ops

ELEMENTWISE_KINDS: tuple[str, ...] = ("add", "sub", "mul")


def elementwise(kind: str, a: object, b: object) -> Tensor:
    """``a (op) b`` where ``b`` is a scalar or broadcasts onto ``a``'s shape."""
    if kind not in ELEMENTWISE_KINDS:
        raise ValueError(f"unknown elementwise op {kind!r}")
    a = as_tensor(a)
    b = as_tensor(b)
    try:
        out_shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from exc
    if out_shape != a.shape:
        raise ShapeError(f"{kind}: cannot broadcast {b.shape} onto {a.shape}")

    a_data, b_data = a.data, b.data
    if kind == "add":
        data = a_data + b_data
    elif kind == "sub":
        data = a_data - b_data
    else:
        data = a_data * b_data

    def backward(grad: np.ndarray) -> tuple[np.ndarray | None, np.ndarray | None]:
        if kind == "mul":
            ga = grad * b_data if a.requires_grad else None
            gb = unbroadcast(grad * a_data, b_data.shape) if b.requires_grad else None
        else:
            ga = grad
            gb = unbroadcast(grad if kind == "add" else -grad, b_data.shape)
        return ga, gb

    return apply_op(kind, data, (a, b), backward)


def _commutative(kind: str, a: Tensor, b: object) -> Tensor:
    b = as_tensor(b)
    try:
        out_shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        return elementwise(kind, a, b)
    if out_shape != a.shape and out_shape == b.shape:
        return elementwise(kind, b, a)
    return elementwise(kind, a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of M×K and K×N operands, optionally batched (B×M×K)."""
    if a.ndim not in (2, 3) or b.ndim != a.ndim:
        raise ShapeError(f"matmul needs two matrices or two batches, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    if a.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul batch extents differ: {a.shape} vs {b.shape}")
    a_data, b_data = a.data, b.data

    def backward(grad: np.ndarray) -> tuple[np.ndarray | None, np.ndarray | None]:
        ga = np.matmul(grad, np.swapaxes(b_data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a_data, -1, -2), grad) if b.requires_grad else None
        return ga, gb

    return apply_op("matmul", np.matmul(a_data, b_data), (a, b), backward)


def softmax(x: Tensor, axis: int) -> Tensor:
    """Max-shifted softmax; slices along ``axis`` sum to one."""
    (axis,) = _normalize_axes(axis, x.ndim)
    if not np.isfinite(x.data).all():
        raise NonFiniteError(f"softmax input contains non-finite values (shape {x.shape})")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    expo = np.exp(shifted)
    probs = expo / expo.sum(axis=axis, keepdims=True)

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        return (probs * (grad - (grad * probs).sum(axis=axis, keepdims=True)),)

    return apply_op("softmax", probs, (x,), backward)


def activation(kind: str, x: Tensor) -> Tensor:
    """ReLU or logistic sigmoid."""
    x_data = x.data
    if kind == "relu":
        mask = x_data > 0
        data = np.where(mask, x_data, 0).astype(x_data.dtype, copy=False)

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (grad * mask,)

    elif kind == "sigmoid":
        z = np.exp(-np.abs(x_data))
        data = np.where(x_data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(
            x_data.dtype, copy=False
        )

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (grad * data * (1.0 - data),)

    else:
        raise ValueError(f"unknown activation {kind!r}")
    return apply_op(kind, data, (x,), backward)


def _first_max_mask(arr: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    """One-hot mask of the first maximizer over ``axes`` (C order)."""
    keep: list[int] = [i for i in range(arr.ndim) if i not in axes]
    order: list[int] = keep + list(axes)
    moved = np.transpose(arr, order)
    flat = moved.reshape(moved.shape[: len(keep)] + (-1,))
    winners = np.asarray(flat.argmax(axis=-1))[..., None]
    onehot = np.zeros_like(flat)
    np.put_along_axis(onehot, winners, 1.0, axis=-1)
    return np.transpose(onehot.reshape(moved.shape), np.argsort(order))


REDUCE_KINDS: tuple[str, ...] = ("mean", "max", "sum")


def reduce(kind: str, x: Tensor, axes: Sequence[int] | int | None) -> Tensor:
    """Reduce over ``axes`` keeping them as extent-1 dims."""
    if kind not in REDUCE_KINDS:
        raise ValueError(f"unknown reduction {kind!r}")
    if axes is not None and not isinstance(axes, int) and len(axes) == 0:
        raise ShapeError("reduction needs at least one axis")
    axes_t = _normalize_axes(axes, x.ndim)
    if not axes_t:
        raise ShapeError("reduction needs at least one axis")
    shape = x.shape

    if kind == "sum":
        data = x.data.sum(axis=axes_t, keepdims=True)

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (np.broadcast_to(grad, shape).copy(),)

    elif kind == "mean":
        count: int = int(np.prod([shape[a] for a in axes_t]))
        data = x.data.mean(axis=axes_t, keepdims=True)

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (np.broadcast_to(grad / count, shape).copy(),)

    else:
        data = x.data.max(axis=axes_t, keepdims=True)
        x_data = x.data

        def backward(grad: np.ndarray) -> tuple[np.ndarray]:
            return (_first_max_mask(x_data, axes_t) * grad,)

    return apply_op(kind, data, (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Order-preserving reshape (a view of the row-major buffer)."""
    shape = tuple(int(n) for n in shape)
    if int(np.prod(shape)) != x.size or any(n < 0 for n in shape):
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) to {shape}")
    original = x.shape

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad.reshape(original),)

    return apply_op("reshape", x.data.reshape(shape), (x,), backward)


def transpose2d(x: Tensor) -> Tensor:
    """Swap the last two extents (matrix or batch of matrices)."""
    if x.ndim < 2:
        raise ShapeError(f"transpose2d needs rank >= 2, got shape {x.shape}")

    def backward(grad: np.ndarray) -> tuple[np.ndarray]:
        return (np.swapaxes(grad, -1, -2),)

    return apply_op("transpose2d", np.swapaxes(x.data, -1, -2), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Stack tensors along ``axis``; all other extents must agree."""
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    first = tensors[0]
    (axis,) = _normalize_axes(axis, first.ndim)
    for t in tensors[1:]:
        if t.ndim != first.ndim or any(
            t.shape[i] != first.shape[i] for i in range(first.ndim) if i != axis
        ):
            raise ShapeError(
                f"concat along axis {axis}: ragged shapes {[t.shape for t in tensors]}"
            )
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(grad: np.ndarray) -> list[np.ndarray]:
        return np.split(grad, bounds, axis=axis)

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return apply_op("concat", data, tuple(tensors), backward)


# Verification


def grad_check_leaf(
    loss_fn: Callable[[], Tensor],
    leaf: Tensor,
    eps: float = 1e-6,
    *,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-8,
) -> float:
    """Max relative error of dLoss/dLeaf against central differences.

    ``leaf`` is perturbed in place (and restored) for the numeric side, so
    it may be a model parameter that layers hold by reference. Error per
    coordinate is ``|a - n| / max(|a|, |n|, floor)``. With ``max_coords`` a
    seeded subset of coordinates is checked.
    """
    if get_precision() != "f64" or leaf.dtype != np.float64:
        raise GradCheckError("grad_check requires f64 precision")
    base: np.ndarray = leaf.data
    saved_grad, saved_flag = leaf.grad, leaf.requires_grad
    leaf.grad, leaf.requires_grad = None, True
    try:
        with Tape(rng_seed=seed) as tape:
            tape.backward(loss_fn(), targets=[leaf])
        analytic: np.ndarray = leaf.grad

        def evaluate(values: np.ndarray) -> float:
            leaf.data = values
            with no_grad():
                return loss_fn().item()

        if evaluate(base.copy()) != evaluate(base.copy()):
            raise GradCheckError("function under check is not deterministic")

        if max_coords is None or max_coords >= base.size:
            coords: np.ndarray = np.arange(base.size)
        else:
            coords = np.sort(
                tape.rng("grad_check").choice(base.size, size=max_coords, replace=False)
            )

        worst: float = 0.0
        for flat_index in coords:
            idx = np.unravel_index(int(flat_index), base.shape)
            plus = base.copy()
            plus[idx] += eps
            minus = base.copy()
            minus[idx] -= eps
            numeric: float = (evaluate(plus) - evaluate(minus)) / (2.0 * eps)
            exact: float = float(analytic[idx])
            err: float = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            worst = max(worst, err)
    finally:
        leaf.data = base
        leaf.grad, leaf.requires_grad = saved_grad, saved_flag
    logger.debug("grad_check checked %d coordinates, worst error %.3e", len(coords), worst)
    return worst


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-6,
    *,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-8,
) -> float:
    """Gradient check of a tensor function ``f`` at ``x`` (``x`` is not modified)."""
    if get_precision() != "f64":
        raise GradCheckError("grad_check requires f64 precision")
    leaf = Tensor(x.data, requires_grad=True)
    return grad_check_leaf(
        lambda: f(leaf), leaf, eps, max_coords=max_coords, seed=seed, floor=floor
    )
