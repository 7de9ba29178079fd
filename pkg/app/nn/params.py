"""
Именованные параметры слоев и шаг SGD с моментом.
"""
import hashlib
import logging
from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from app.core.exceptions import InputError, ParameterError, StateError
from app.nn.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class ParamEntry:
    tensor: Tensor
    trainable: bool = True
    velocity: Optional[np.ndarray] = None


class Params:
    """Упорядоченное отображение имя параметра -> Tensor с флагом обучаемости"""

    def __init__(self) -> None:
        self._entries: Dict[str, ParamEntry] = {}

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise InputError(f"duplicate parameter identifier '{name}'")
        tensor = value if isinstance(value, Tensor) else Tensor(value, name=name)
        tensor.name = name
        tensor.requires_grad = trainable
        self._entries[name] = ParamEntry(tensor=tensor, trainable=trainable)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def entry(self, name: str) -> ParamEntry:
        return self._entries[name]

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        for name, entry in self._entries.items():
            yield name, entry.tensor

    def is_trainable(self, name: str) -> bool:
        return self._entries[name].trainable

    def any_trainable(self) -> bool:
        return any(e.trainable for e in self._entries.values())

    def set_trainable(self, trainable: bool) -> None:
        """Замораживает или размораживает все параметры"""
        for entry in self._entries.values():
            entry.trainable = trainable
            entry.tensor.requires_grad = trainable
            entry.tensor.grad = None
            entry.velocity = None

    def freeze(self) -> "Params":
        self.set_trainable(False)
        return self

    def zero_grad(self) -> None:
        for entry in self._entries.values():
            entry.tensor.grad = None

    def copy_arrays(self) -> Dict[str, np.ndarray]:
        return {name: entry.tensor.data.copy() for name, entry in self._entries.items()}

    def digest(self) -> str:
        """sha256 по именам и байтам всех параметров"""
        sha = hashlib.sha256()
        for name in sorted(self._entries):
            sha.update(name.encode("utf-8"))
            sha.update(np.ascontiguousarray(self._entries[name].tensor.data).tobytes())
        return sha.hexdigest()

    def numel(self) -> int:
        return sum(e.tensor.size for e in self._entries.values())


def sgd_step(params: Params, learning_rate: float, momentum: float = 0.0) -> Params:
    """
    v <- momentum * v - lr * grad; p <- p + v.
    Необучаемые параметры не изменяются; градиенты обнуляются после шага.
    """
    if learning_rate < 0:
        raise ParameterError(f"learning rate must be non-negative, got {learning_rate}")
    if momentum < 0:
        raise ParameterError(f"momentum must be non-negative, got {momentum}")

    for name, entry in params._entries.items():
        if entry.trainable and entry.tensor.grad is None:
            raise StateError(f"trainable parameter '{name}' has no gradient")

    for entry in params._entries.values():
        if entry.trainable:
            grad = entry.tensor.grad
            if entry.velocity is None:
                velocity = -learning_rate * grad
            else:
                velocity = momentum * entry.velocity - learning_rate * grad
            entry.velocity = velocity
            entry.tensor.data = entry.tensor.data + velocity
        entry.tensor.grad = None

    return params
