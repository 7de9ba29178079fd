"""
Слияние экспертов: гейтинговая сеть и схемы mode (MoDE), average, switch,
late, channel и single.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.exceptions import ConfigurationError, DimensionError, InputError
from app.nn import (
    Params,
    Tensor,
    affine,
    concat,
    dropout,
    flatten,
    relu,
    reshape,
    select,
    softmax,
    stack,
    weighted_sum,
)
from app.services.experts import (
    DEFAULT_DROPOUT,
    ExpertNet,
    ExpertOutput,
    expert_forward,
    expert_head,
    extract_features,
)

logger = logging.getLogger(__name__)

HIDDEN_UNITS = 64
SIMPLEX_TOLERANCE = 1e-6


class FusionScheme(str, Enum):
    MODE = "mode"
    AVERAGE = "average"
    SWITCH = "switch"
    LATE = "late"
    CHANNEL = "channel"
    SINGLE = "single"


GATED_SCHEMES = (FusionScheme.MODE, FusionScheme.SWITCH)


@dataclass
class DenseHead:
    """Двухслойная сеть affine(D->64)-relu-dropout-affine(64->K)-softmax"""

    input_dim: int
    output_dim: int
    params: Params
    hidden: int = HIDDEN_UNITS
    dropout_rate: float = DEFAULT_DROPOUT
    loss_history: List[float] = field(default_factory=list)


class GatingNet(DenseHead):
    """Гейт: вероятности выбора экспертов по конкатенированным признакам r(x)"""

    @property
    def expert_count(self) -> int:
        return self.output_dim


def _build_dense(
    cls,
    input_dim: int,
    output_dim: int,
    rng: np.random.Generator,
    zero_output: bool,
    dropout_rate: float,
    hidden: int = HIDDEN_UNITS,
):
    if input_dim < 1 or output_dim < 1:
        raise ConfigurationError(f"head dimensions must be positive, got {input_dim}->{output_dim}")
    params = Params()
    params.add("fc1.weight", rng.standard_normal((input_dim, hidden)) * np.sqrt(2.0 / input_dim))
    params.add("fc1.bias", np.zeros(hidden))
    if zero_output:
        # нулевой выходной слой: равномерные веса на старте
        params.add("fc2.weight", np.zeros((hidden, output_dim)))
    else:
        params.add("fc2.weight", rng.standard_normal((hidden, output_dim)) * np.sqrt(2.0 / hidden))
    params.add("fc2.bias", np.zeros(output_dim))
    return cls(input_dim=input_dim, output_dim=output_dim, params=params,
               hidden=hidden, dropout_rate=dropout_rate)


def build_gate(
    input_dim: int,
    expert_count: int,
    rng: np.random.Generator,
    zero_output: bool = True,
    dropout_rate: float = DEFAULT_DROPOUT,
) -> GatingNet:
    return _build_dense(GatingNet, input_dim, expert_count, rng, zero_output, dropout_rate)


def build_late_head(
    input_dim: int,
    class_count: int,
    rng: np.random.Generator,
    zero_output: bool = True,
    dropout_rate: float = DEFAULT_DROPOUT,
) -> DenseHead:
    return _build_dense(DenseHead, input_dim, class_count, rng, zero_output, dropout_rate)


def _dense_forward(
    head: DenseHead,
    r: Tensor,
    training: bool,
    rng: Optional[np.random.Generator],
) -> Tensor:
    single = r.data.ndim == 1
    if r.shape[-1] != head.input_dim or r.data.ndim not in (1, 2):
        raise DimensionError("head input length mismatch", r.shape, (head.input_dim,))
    x = reshape(r, (1, head.input_dim)) if single else r
    hidden = relu(affine(x, head.params["fc1.weight"], head.params["fc1.bias"]))
    hidden = dropout(hidden, head.dropout_rate, rng, training)
    out = softmax(affine(hidden, head.params["fc2.weight"], head.params["fc2.bias"]))
    return reshape(out, (head.output_dim,)) if single else out


def gate_forward(
    gate: GatingNet,
    r: Tensor,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """g = softmax(xi), xi - выход двухслойной сети над r(x)"""
    return _dense_forward(gate, r, training, rng)


def late_fusion_forward(
    head: DenseHead,
    r: Tensor,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Классификатор поверх признаков последних пулингов, минуя апостериорные экспертов"""
    return _dense_forward(head, r, training, rng)


def concat_features(outputs: Sequence[Union[ExpertOutput, Tensor]]) -> Tensor:
    """
    Складывает карты признаков по оси фильтров и разворачивает построчно.

    Nh×Hh×Wh от M экспертов -> вектор длины sum(Nh)·Hh·Wh (или B× для батча).
    """
    if not outputs:
        raise InputError("concat_features needs at least one expert output")
    maps = [o.features if isinstance(o, ExpertOutput) else o for o in outputs]
    spatial = {m.shape[-2:] for m in maps}
    ranks = {m.data.ndim for m in maps}
    if len(spatial) != 1 or len(ranks) != 1 or ranks.pop() not in (3, 4):
        raise DimensionError("expert feature maps disagree", *[m.shape for m in maps])
    batched = maps[0].data.ndim == 4
    joined = concat(maps, axis=1 if batched else 0) if len(maps) > 1 else maps[0]
    return flatten(joined, batched=batched)


def _check_simplex(g: Tensor) -> None:
    values = g.data
    if values.ndim not in (1, 2):
        raise DimensionError("gate must be M or B×M", g.shape)
    if values.min() < -SIMPLEX_TOLERANCE or np.any(np.abs(values.sum(axis=-1) - 1.0) > SIMPLEX_TOLERANCE):
        raise InputError("gate weights must lie on the probability simplex")


def _stack_posteriors(g: Tensor, posteriors: Sequence[Tensor]) -> Tensor:
    if not posteriors:
        raise InputError("fusion needs at least one posterior")
    if g.shape[-1] != len(posteriors):
        raise DimensionError("gate width must equal expert count", g.shape, (len(posteriors),))
    axis = 0 if g.data.ndim == 1 else 1
    return stack(list(posteriors), axis=axis)


def mode_combine(g: Tensor, posteriors: Sequence[Tensor]) -> Tensor:
    """F = sum_i g_i * f_i"""
    _check_simplex(g)
    return weighted_sum(g, _stack_posteriors(g, posteriors))


def average_fusion(posteriors: Sequence[Tensor]) -> Tensor:
    """F = (1/M) sum_i f_i; совпадает с mode_combine при равномерном g"""
    if not posteriors:
        raise InputError("average_fusion needs at least one posterior")
    count = len(posteriors)
    first = posteriors[0]
    shape = (count,) if first.data.ndim == 1 else (first.shape[0], count)
    return mode_combine(Tensor(np.full(shape, 1.0 / count)), posteriors)


def switch_fusion(g: Tensor, posteriors: Sequence[Tensor]) -> Tensor:
    """F = f_argmax(g); при равенстве выбирается эксперт с меньшим индексом"""
    _check_simplex(g)
    stacked = _stack_posteriors(g, posteriors)
    return select(stacked, np.argmax(g.data, axis=-1))


def channel_fusion_forward(
    net: ExpertNet,
    stacked: Tensor,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Один эксперт над модальностями, сложенными по каналам"""
    channels = stacked.shape[-3] if stacked.data.ndim >= 3 else None
    if channels != net.input_size[0]:
        raise DimensionError("channel fusion input mismatch", stacked.shape, net.input_size)
    return expert_forward(net, stacked, training, rng).posterior


@dataclass
class FusedModel:
    """Слияние экспертов по одной из схем"""

    experts: List[ExpertNet]
    scheme: FusionScheme
    gate: Optional[GatingNet] = None
    head: Optional[DenseHead] = None
    channel_net: Optional[ExpertNet] = None
    channel_order: Tuple[str, ...] = ()

    def __post_init__(self):
        self.scheme = FusionScheme(self.scheme)
        if self.scheme == FusionScheme.CHANNEL:
            if self.channel_net is None:
                raise ConfigurationError("channel scheme needs a multi-channel expert")
            if not self.channel_order:
                self.channel_order = tuple(self.channel_net.modalities)
            if tuple(self.channel_order) != tuple(self.channel_net.modalities):
                raise ConfigurationError(
                    f"channel order {list(self.channel_order)} does not match "
                    f"network order {list(self.channel_net.modalities)}"
                )
        elif not self.experts:
            raise ConfigurationError(f"scheme '{self.scheme.value}' needs at least one expert")
        if self.scheme == FusionScheme.SINGLE and len(self.experts) != 1:
            raise ConfigurationError("single scheme wraps exactly one expert")

        needs_gate = self.scheme in GATED_SCHEMES
        if needs_gate != (self.gate is not None):
            raise ConfigurationError(f"scheme '{self.scheme.value}' gate presence mismatch")
        if (self.scheme == FusionScheme.LATE) != (self.head is not None):
            raise ConfigurationError(f"scheme '{self.scheme.value}' late head presence mismatch")
        if self.scheme != FusionScheme.CHANNEL and self.channel_net is not None:
            raise ConfigurationError(f"scheme '{self.scheme.value}' takes no channel network")

        classes = {e.class_count for e in self.experts}
        if self.channel_net is not None:
            classes.add(self.channel_net.class_count)
        if len(classes) > 1:
            raise ConfigurationError(f"experts disagree on class count: {sorted(classes)}")
        if self.gate is not None:
            self._check_head(self.gate, len(self.experts))
        if self.head is not None:
            self._check_head(self.head, self.class_count)

    def _check_head(self, head: DenseHead, output_dim: int) -> None:
        if head.input_dim != self.feature_length or head.output_dim != output_dim:
            raise ConfigurationError(
                f"head shape {head.input_dim}->{head.output_dim} does not fit "
                f"experts ({self.feature_length}->{output_dim})"
            )

    @property
    def class_count(self) -> int:
        net = self.channel_net if self.scheme == FusionScheme.CHANNEL else self.experts[0]
        return net.class_count

    @property
    def feature_length(self) -> int:
        return sum(e.feature_length for e in self.experts)

    @property
    def modalities(self) -> Tuple[str, ...]:
        """Модальности, которые модель требует от окна"""
        if self.scheme == FusionScheme.CHANNEL:
            return tuple(self.channel_order)
        return tuple(m for e in self.experts for m in e.modalities)

    @property
    def expert_names(self) -> List[str]:
        if self.scheme == FusionScheme.CHANNEL:
            return [self.channel_net.modality]
        return [e.modality for e in self.experts]

    @property
    def provides_gate(self) -> bool:
        return self.scheme in GATED_SCHEMES


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def fuse_features(
    model: FusedModel,
    features: Sequence[Tensor],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor, Optional[Tensor]]:
    """
    Слияние по заранее посчитанным картам признаков экспертов (до dropout).

    Головы экспертов применяют dropout в режиме обучения; r(x) строится
    из тех же признаков после dropout.
    """
    if model.scheme == FusionScheme.CHANNEL:
        raise InputError("channel scheme works on stacked inputs, not expert features")
    if len(features) != len(model.experts):
        raise DimensionError("one feature map per expert expected", (len(features),), (len(model.experts),))

    if model.scheme == FusionScheme.LATE:
        dropped = [dropout(h, e.dropout_rate, rng, training) for e, h in zip(model.experts, features)]
        return late_fusion_forward(model.head, concat_features(dropped), training, rng), None

    outputs = [expert_head(e, h, training, rng) for e, h in zip(model.experts, features)]
    posteriors = [o.posterior for o in outputs]

    if model.scheme == FusionScheme.SINGLE:
        return posteriors[0], None
    if model.scheme == FusionScheme.AVERAGE:
        return average_fusion(posteriors), None

    g = gate_forward(model.gate, concat_features(outputs), training, rng)
    if model.scheme == FusionScheme.MODE:
        return mode_combine(g, posteriors), g
    return switch_fusion(g, posteriors), g


def fused_forward(
    model: FusedModel,
    window: Mapping[str, Union[Tensor, np.ndarray]],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor, Optional[Tensor]]:
    """
    Полный проход: эксперты -> r(x) -> схема слияния.

    Args:
        window: кропы по модальностям (C×S×S или B×C×S×S)

    Returns:
        (F, g): слитые вероятности и веса гейта (для mode/switch)
    """
    for name in model.modalities:
        if name not in window:
            raise InputError(f"window is missing modality '{name}'")

    if model.scheme == FusionScheme.CHANNEL:
        parts = [_as_tensor(window[m]) for m in model.channel_order]
        stacked = concat(parts, axis=parts[0].data.ndim - 3)
        return channel_fusion_forward(model.channel_net, stacked, training, rng), None

    features = []
    for expert in model.experts:
        inputs = [_as_tensor(window[m]) for m in expert.modalities]
        x = inputs[0] if len(inputs) == 1 else concat(inputs, axis=inputs[0].data.ndim - 3)
        features.append(extract_features(expert, x))
    return fuse_features(model, features, training, rng)
