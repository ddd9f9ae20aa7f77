"""Named, ordered collection of learnable tensors plus optimizer state."""

from __future__ import annotations

from typing import TYPE_CHECKING, Iterator

from backend.models.tensor import Tensor

if TYPE_CHECKING:
    from backend.models.adam_optimizer import AdamState


class ParamSet:
    """Insertion-ordered ``name -> Tensor`` mapping with unique names.

    Example
    -------
    >>> params = ParamSet()
    >>> w = params.add("fc.weight", Tensor([[1.0, 2.0]], requires_grad=True))
    >>> params.count()
    2
    """

    def __init__(self) -> None:
        self.__tensors: dict[str, Tensor] = {}
        self.optimizer_state: "AdamState | None" = None

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self.__tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        self.__tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.__tensors[name]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: object) -> bool:
        return name in self.__tensors

    def __len__(self) -> int:
        return len(self.__tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(self.__tensors)

    def names(self) -> list[str]:
        return list(self.__tensors)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self.__tensors.items())

    def count(self) -> int:
        """Total number of learnable scalars."""
        return sum(t.size for t in self.__tensors.values())

    def zero_grad(self) -> None:
        for tensor in self.__tensors.values():
            tensor.zero_grad()

