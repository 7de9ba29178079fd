"""
Плотный тензор с обратным автоматическим дифференцированием.

Операции записываются на явную ленту (Tape) текущего прямого прохода;
после backward лента очищается. Без активной ленты операции просто
вычисляют значения.
"""
from __future__ import annotations

import logging
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import DimensionError, InputError

logger = logging.getLogger(__name__)

DTYPE = np.float64

_active_tape: ContextVar[Optional["Tape"]] = ContextVar("active_tape", default=None)


class Tensor:
    """Плотный массив float64 с необязательным слотом градиента."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        array = np.asarray(data, dtype=DTYPE)
        if array.ndim == 0:
            array = array.reshape(())
        if not np.all(np.isfinite(array)):
            raise InputError(f"Tensor '{name or 'unnamed'}' contains non-finite values")
        self.data: np.ndarray = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> "Tensor":
        """Оборачивает результат операции без повторной проверки конечности"""
        t = cls.__new__(cls)
        t.data = array
        t.grad = None
        t.requires_grad = requires_grad
        t.name = ""
        return t

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError("item() requires a single-element tensor", self.shape)
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=DTYPE, copy=True)
        else:
            self.grad = self.grad + grad

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class _Node:
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: BackwardFn


@dataclass
class Tape:
    """Лента прямого прохода; используется как контекстный менеджер."""

    nodes: List[_Node] = field(default_factory=list)
    _token: object = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward: BackwardFn) -> None:
        self.nodes.append(_Node(output, tuple(inputs), backward))

    def backward(self, loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
        """
        Обратный проход от скаляра loss. Градиенты накапливаются в .grad
        листовых тензоров с requires_grad=True; лента затем очищается.
        """
        if grad is None:
            if loss.size != 1:
                raise DimensionError("backward() without grad needs a scalar loss", loss.shape)
            grad = np.ones_like(loss.data)

        grads = {id(loss): np.asarray(grad, dtype=DTYPE)}
        produced = {id(node.output) for node in self.nodes}

        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            input_grads = node.backward(upstream)
            for tensor, g in zip(node.inputs, input_grads):
                if g is None or not tensor.requires_grad:
                    continue
                if id(tensor) in produced:
                    key = id(tensor)
                    grads[key] = grads[key] + g if key in grads else g
                else:
                    tensor.accumulate(g)

        if id(loss) not in produced and loss.requires_grad:
            loss.accumulate(grads.get(id(loss), grad))

        self.nodes.clear()


def active_tape() -> Optional[Tape]:
    return _active_tape.get()


def make_result(array: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Создает выходной тензор операции и записывает его на ленту при необходимости"""
    if not np.isfinite(array).all():
        raise InputError("Operation produced non-finite values")
    tape = _active_tape.get()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(array, requires_grad=needs_grad)
    if needs_grad:
        tape.record(out, inputs, backward)
    return out


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)
