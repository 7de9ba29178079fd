"""
Операции слоев с точным обратным проходом.

Все операции принимают Tensor и возвращают новый Tensor; входы не изменяются.
Сверточные операции принимают C×H×W или B×C×H×W (ведущая размерность батча).
"""
import logging
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.core.exceptions import DimensionError, InputError, ParameterError
from app.nn.tensor import DTYPE, Tensor, make_result

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-12
SOFTMAX_FLOOR = np.finfo(np.float64).tiny


def _batched(x: Tensor, rank: int) -> tuple[np.ndarray, bool]:
    """Добавляет ось батча к одиночному примеру"""
    if x.data.ndim == rank - 1:
        return x.data[np.newaxis], True
    if x.data.ndim == rank:
        return x.data, False
    raise DimensionError(f"expected a tensor of rank {rank - 1} or {rank}", x.shape)


def affine(input: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """out[b,k] = sum_d input[b,d] * weight[d,k] + bias[k]"""
    if input.data.ndim != 2 or weight.data.ndim != 2 or bias.data.ndim != 1:
        raise DimensionError("affine expects input B×D, weight D×K, bias K",
                             input.shape, weight.shape, bias.shape)
    if input.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise DimensionError("affine inner dimensions disagree",
                             input.shape, weight.shape, bias.shape)

    x, w = input.data, weight.data
    out = x @ w + bias.data

    def backward(g: np.ndarray):
        return g @ w.T, x.T @ g, g.sum(axis=0)

    return make_result(out, (input, weight, bias), backward)


def conv2d(
    input: Tensor,
    kernels: Tensor,
    bias: Tensor,
    stride: int = 1,
    pad: int = 0,
) -> Tensor:
    """Двумерная кросс-корреляция: H' = floor((H + 2*pad - k) / stride) + 1"""
    if stride < 1 or pad < 0:
        raise ParameterError(f"conv2d needs stride >= 1 and pad >= 0, got stride={stride}, pad={pad}")
    x, single = _batched(input, 4)
    if kernels.data.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise DimensionError("conv2d kernels must be C_out×C_in×k×k", kernels.shape)
    c_out, c_in, k, _ = kernels.shape
    batch, channels, height, width = x.shape
    if channels != c_in:
        raise DimensionError("conv2d channel mismatch between input and kernels",
                             input.shape, kernels.shape)
    if bias.shape != (c_out,):
        raise DimensionError("conv2d bias must have C_out entries", bias.shape, kernels.shape)
    if height + 2 * pad < k or width + 2 * pad < k:
        raise DimensionError("conv2d kernel larger than padded input", input.shape, kernels.shape)

    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    out_h = (height + 2 * pad - k) // stride + 1
    out_w = (width + 2 * pad - k) // stride + 1
    # (B, C, H', W', k, k)
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    w = kernels.data
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))  # (B, H', W', C_out)
    out = out.transpose(0, 3, 1, 2) + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    if single:
        out = out[0]

    def backward(g: np.ndarray):
        gb = g[np.newaxis] if single else g
        d_bias = gb.sum(axis=(0, 2, 3))
        d_kernels = np.tensordot(gb, windows, axes=([0, 2, 3], [0, 2, 3]))
        dxp = np.zeros_like(xp)
        h_span = stride * (out_h - 1) + 1
        w_span = stride * (out_w - 1) + 1
        for i in range(k):
            for j in range(k):
                # (B, C_out, H', W') x (C_out, C_in) -> (B, H', W', C_in)
                contrib = np.tensordot(gb, w[:, :, i, j], axes=([1], [0]))
                dxp[:, :, i:i + h_span:stride, j:j + w_span:stride] += contrib.transpose(0, 3, 1, 2)
        dx = dxp[:, :, pad:pad + height, pad:pad + width] if pad else dxp
        if single:
            dx = dx[0]
        return dx, d_kernels, d_bias

    return make_result(out, (input, kernels, bias), backward)


def maxpool2d(input: Tensor, window: int, stride: int) -> Tensor:
    """Максимум по окну; градиент идет в первый максимум окна (row-major)"""
    if window < 1 or stride < 1:
        raise ParameterError(f"maxpool2d needs positive window and stride, got {window}, {stride}")
    x, single = _batched(input, 4)
    batch, channels, height, width = x.shape
    if height < window or width < window:
        raise DimensionError(f"maxpool2d window {window} exceeds input extent", input.shape)

    out_h = (height - window) // stride + 1
    out_w = (width - window) // stride + 1
    windows = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = windows.reshape(batch, channels, out_h, out_w, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    if single:
        out = out[0]

    def backward(g: np.ndarray):
        gb = g[np.newaxis] if single else g
        dx = np.zeros_like(x)
        rows = np.arange(out_h)[:, None] * stride + arg // window
        cols = np.arange(out_w)[None, :] * stride + arg % window
        b_idx = np.arange(batch)[:, None, None, None]
        c_idx = np.arange(channels)[None, :, None, None]
        np.add.at(dx, (b_idx, c_idx, rows, cols), gb)
        return (dx[0] if single else dx,)

    return make_result(np.ascontiguousarray(out), (input,), backward)


def relu(input: Tensor) -> Tensor:
    x = input.data
    mask = x > 0
    out = np.where(mask, x, 0.0)

    def backward(g: np.ndarray):
        return (np.where(mask, g, 0.0),)

    return make_result(out, (input,), backward)


def dropout(
    input: Tensor,
    rate: float,
    rng: Optional[np.random.Generator],
    training: bool,
) -> Tensor:
    """Инвертированный dropout: выжившие элементы масштабируются на 1/(1-rate)"""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return input
    if rng is None:
        raise ParameterError("dropout in training mode needs a seeded generator")

    scale = 1.0 / (1.0 - rate)
    mask = (rng.random(input.shape) >= rate) * scale
    out = input.data * mask

    def backward(g: np.ndarray):
        return (g * mask,)

    return make_result(out, (input,), backward)


def softmax(z: Tensor) -> Tensor:
    """
    Softmax по последней оси со сдвигом на максимум.

    Исчезающие при большом разрыве логитов элементы поднимаются до
    наименьшего нормального float64, строка перенормируется.
    """
    if z.data.ndim == 0 or z.shape[-1] < 1:
        raise DimensionError("softmax needs at least one entry", z.shape)
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    underflow = (s < SOFTMAX_FLOOR).any(axis=-1, keepdims=True)
    if underflow.any():
        floored = np.maximum(s, SOFTMAX_FLOOR)
        s = np.where(underflow, floored / floored.sum(axis=-1, keepdims=True), s)

    def backward(g: np.ndarray):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_result(s, (z,), backward)


def cross_entropy_loss(F: Tensor, Y: Tensor) -> Tensor:
    """L = -(1/B) * sum_b Y_b . log F_b, log ограничен снизу log(1e-12)"""
    if F.data.ndim == 1:
        F = reshape(F, (1, F.shape[0]))
    y = Y.data.reshape(1, -1) if Y.data.ndim == 1 else Y.data
    if F.shape != y.shape:
        raise DimensionError("cross_entropy_loss needs matching F and Y", F.shape, y.shape)
    binary = (y == 0.0) | (y == 1.0)
    if not (binary.all() and np.all((y == 1.0).sum(axis=1) == 1)):
        raise InputError("cross_entropy_loss labels must be one-hot rows")
    row_sums = F.data.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise InputError("cross_entropy_loss needs probability rows summing to 1")

    batch = F.shape[0]
    f = F.data
    clamped = f > LOG_CLAMP
    logs = np.log(np.where(clamped, f, LOG_CLAMP))
    loss = -(y * logs).sum() / batch

    def backward(g: np.ndarray):
        safe = np.where(clamped, f, 1.0)
        return (np.where(clamped, -y / safe, 0.0) * (g / batch),)

    return make_result(np.asarray(loss, dtype=DTYPE), (F,), backward)


def reshape(input: Tensor, shape: Sequence[int]) -> Tensor:
    original = input.shape
    try:
        out = input.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError("cannot reshape", original, tuple(shape))

    def backward(g: np.ndarray):
        return (g.reshape(original),)

    return make_result(out, (input,), backward)


def flatten(input: Tensor, batched: bool = True) -> Tensor:
    """Разворачивает все оси, кроме батча (row-major)"""
    if batched:
        return reshape(input, (input.shape[0], -1))
    return reshape(input, (-1,))


def concat(inputs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not inputs:
        raise InputError("concat needs at least one tensor")
    arrays = [t.data for t in inputs]
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError:
        raise DimensionError("concat shapes disagree", *[t.shape for t in inputs])
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, tuple(inputs), backward)


def stack(inputs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not inputs:
        raise InputError("stack needs at least one tensor")
    try:
        out = np.stack([t.data for t in inputs], axis=axis)
    except ValueError:
        raise DimensionError("stack shapes disagree", *[t.shape for t in inputs])
    count = len(inputs)

    def backward(g: np.ndarray):
        return tuple(np.take(g, i, axis=axis) for i in range(count))

    return make_result(out, tuple(inputs), backward)


def weighted_sum(weights: Tensor, stacked: Tensor) -> Tensor:
    """
    Выпуклая комбинация: out[..., c] = sum_i weights[..., i] * stacked[..., i, c].

    weights: (M) или (B×M); stacked: (M×C) или (B×M×C).
    """
    w, s = weights.data, stacked.data
    if s.ndim != w.ndim + 1 or s.shape[:-1] != w.shape:
        raise DimensionError("weighted_sum needs weights (..., M) and stacked (..., M, C)",
                             weights.shape, stacked.shape)
    out = (w[..., :, None] * s).sum(axis=-2)

    def backward(g: np.ndarray):
        d_w = (s * g[..., None, :]).sum(axis=-1)
        d_s = w[..., :, None] * g[..., None, :]
        return d_w, d_s

    return make_result(out, (weights, stacked), backward)


def select(stacked: Tensor, index: np.ndarray) -> Tensor:
    """Выбирает stacked[b, index[b], :] для каждого элемента батча"""
    s = stacked.data
    if s.ndim == 2:
        idx = int(np.asarray(index).reshape(-1)[0])
        out = s[idx].copy()

        def backward_single(g: np.ndarray):
            d = np.zeros_like(s)
            d[idx] = g
            return (d,)

        return make_result(out, (stacked,), backward_single)

    idx = np.asarray(index, dtype=np.int64)
    rows = np.arange(s.shape[0])
    out = s[rows, idx].copy()

    def backward(g: np.ndarray):
        d = np.zeros_like(s)
        d[rows, idx] = g
        return (d,)

    return make_result(out, (stacked,), backward)

