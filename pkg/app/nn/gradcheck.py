"""
Оракул градиентов: сравнение аналитического градиента с центральной разностью.
"""
import logging
from typing import Callable, Optional

import numpy as np

from app.core.exceptions import DeterminismError, ParameterError
from app.nn.params import Params
from app.nn.tensor import Tape, Tensor

logger = logging.getLogger(__name__)

LossFn = Callable[[Params], Tensor]


def finite_difference_check(
    loss_fn: LossFn,
    params: Params,
    epsilon: float = 1e-4,
    coordinates_per_tensor: int = 50,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Возвращает максимальную относительную ошибку
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
    по выборке координат каждого обучаемого тензора.

    Raises:
        DeterminismError: два базовых вызова loss_fn дали разные значения
    """
    if epsilon <= 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    rng = rng or np.random.default_rng(0)

    first = loss_fn(params).item()
    second = loss_fn(params).item()
    if first != second:
        raise DeterminismError(first, second)

    params.zero_grad()
    with Tape() as tape:
        loss = loss_fn(params)
        tape.backward(loss)

    worst = 0.0
    for name, tensor in params.items():
        if not params.is_trainable(name):
            continue
        analytic_full = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        flat_count = tensor.size
        count = min(coordinates_per_tensor, flat_count)
        picks = rng.choice(flat_count, size=count, replace=False)

        original = tensor.data
        for flat_index in picks:
            index = np.unravel_index(int(flat_index), tensor.shape)
            perturbed = original.copy()
            perturbed[index] += epsilon
            tensor.data = perturbed
            plus = loss_fn(params).item()
            perturbed[index] = original[index] - epsilon
            minus = loss_fn(params).item()
            tensor.data = original

            numeric = (plus - minus) / (2.0 * epsilon)
            analytic = float(analytic_full[index])
            error = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
            worst = max(worst, error)

    params.zero_grad()
    logger.debug(f"Проверка градиентов: максимальная относительная ошибка {worst:.3e}")
    return worst
