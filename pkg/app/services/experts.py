"""
Эксперты по модальностям: небольшая CifarNet-подобная сверточная сеть,
возвращающая карту признаков последнего пулинга и апостериорные вероятности классов,
а также предобработка модальностей (jet-раскраска глубины, кроп с ресайзом).
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from app.core.exceptions import ConfigurationError, DimensionError, InputError, ParameterError
from app.models.dataset import Modality, MultimodalFrame, get_modality
from app.models.geometry import BoundingBox
from app.nn import Params, Tensor, affine, conv2d, dropout, flatten, maxpool2d, relu, reshape, softmax

logger = logging.getLogger(__name__)

ARCHITECTURE = "cifarnet-3conv"

# (имя, выходные фильтры, ядро, паддинг)
CONV_LAYERS: Tuple[Tuple[str, int, int, int], ...] = (
    ("conv1", 16, 5, 2),
    ("conv2", 32, 5, 2),
    ("conv3", 64, 3, 1),
)
POOL = 2
FEATURE_CHANNELS = CONV_LAYERS[-1][1]
DEFAULT_DROPOUT = 0.5

# узлы jet: синий -> голубой -> желтый -> красный
_JET_KNOTS = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
_JET_COLORS = np.array([
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
])


@dataclass
class ExpertNet:
    """Сверточный классификатор одной модальности (или стека модальностей)"""

    modalities: Tuple[str, ...]
    input_size: Tuple[int, int, int]
    class_count: int
    params: Params
    seed: int = 0
    dropout_rate: float = DEFAULT_DROPOUT
    loss_history: List[float] = field(default_factory=list)

    @property
    def modality(self) -> str:
        return "+".join(self.modalities)

    @property
    def feature_shape(self) -> Tuple[int, int, int]:
        _, height, width = self.input_size
        scale = POOL ** len(CONV_LAYERS)
        return (FEATURE_CHANNELS, height // scale, width // scale)

    @property
    def feature_length(self) -> int:
        return int(np.prod(self.feature_shape))

    @property
    def layers(self) -> List[str]:
        """Дескрипторы слоев по порядку"""
        described = []
        for name, filters, kernel, pad in CONV_LAYERS:
            described += [f"{name}:conv{kernel}x{kernel}-{filters}-pad{pad}", "relu", f"pool{POOL}"]
        described += [f"head:affine-{self.class_count}", "softmax"]
        return described


@dataclass
class ExpertOutput:
    features: Tensor
    posterior: Tensor


def _he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def build_expert(
    modality: Union[Modality, str, Sequence[Union[Modality, str]]],
    input_size: Tuple[int, int, int],
    class_count: int,
    rng: np.random.Generator,
    dropout_rate: float = DEFAULT_DROPOUT,
    seed: int = 0,
) -> ExpertNet:
    """
    Создает эксперта с He-инициализацией весов и нулевыми смещениями.

    Для канального слияния передается последовательность модальностей;
    число входных каналов должно совпадать с суммой их каналов.

    Raises:
        ConfigurationError: H или W не делятся на 8, либо каналы не совпадают
    """
    if isinstance(modality, (str, Modality)):
        modality = [modality]
    names = tuple(m.identifier.value if isinstance(m, Modality) else get_modality(m).identifier.value
                  for m in modality)
    channels, height, width = (int(v) for v in input_size)
    scale = POOL ** len(CONV_LAYERS)
    if height % scale or width % scale or height <= 0 or width <= 0:
        raise ConfigurationError(
            f"expert input size {height}x{width} must be divisible by {scale}"
        )
    expected = sum(get_modality(n).channel_count for n in names)
    if channels != expected:
        raise ConfigurationError(
            f"expert for {'+'.join(names)} needs {expected} input channels, got {channels}"
        )
    if class_count < 1:
        raise ConfigurationError(f"class_count must be positive, got {class_count}")

    params = Params()
    c_in = channels
    for name, filters, kernel, _ in CONV_LAYERS:
        fan_in = c_in * kernel * kernel
        params.add(f"{name}.weight", _he_normal(rng, (filters, c_in, kernel, kernel), fan_in))
        params.add(f"{name}.bias", np.zeros(filters))
        c_in = filters

    net = ExpertNet(
        modalities=names,
        input_size=(channels, height, width),
        class_count=class_count,
        params=params,
        seed=seed,
        dropout_rate=dropout_rate,
    )
    length = net.feature_length
    params.add("head.weight", _he_normal(rng, (length, class_count), length))
    params.add("head.bias", np.zeros(class_count))
    logger.debug(f"Эксперт {net.modality}: {params.numel()} параметров, признаки {net.feature_shape}")
    return net


def _check_input(net: ExpertNet, x: Tensor) -> bool:
    """Проверяет форму входа; возвращает True для одиночного примера"""
    if x.data.ndim == 3 and x.shape == net.input_size:
        return True
    if x.data.ndim == 4 and x.shape[1:] == net.input_size:
        return False
    raise DimensionError(f"expert {net.modality} input mismatch", x.shape, net.input_size)


def extract_features(net: ExpertNet, x: Tensor) -> Tensor:
    """Карта признаков последнего пулинга (B×Nh×Hh×Wh или Nh×Hh×Wh)"""
    _check_input(net, x)
    h = x
    for name, _, _, pad in CONV_LAYERS:
        h = conv2d(h, net.params[f"{name}.weight"], net.params[f"{name}.bias"], stride=1, pad=pad)
        h = relu(h)
        h = maxpool2d(h, POOL, POOL)
    return h


def expert_head(
    net: ExpertNet,
    features: Tensor,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> ExpertOutput:
    """Dropout (в режиме обучения) -> affine -> softmax над картой признаков"""
    single = features.data.ndim == 3
    h = dropout(features, net.dropout_rate, rng, training)
    flat = reshape(h, (1, net.feature_length)) if single else flatten(h)
    logits = affine(flat, net.params["head.weight"], net.params["head.bias"])
    posterior = softmax(logits)
    if single:
        posterior = reshape(posterior, (net.class_count,))
    return ExpertOutput(features=h, posterior=posterior)


def expert_forward(
    net: ExpertNet,
    x_i: Tensor,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> ExpertOutput:
    """
    Один проход эксперта.

    Returns:
        ExpertOutput: признаки (после dropout в режиме обучения) и апостериорные вероятности
    """
    return expert_head(net, extract_features(net, x_i), training, rng)


# --------------------
# Предобработка модальностей
# --------------------

def colorize_depth(depth: Union[np.ndarray, Tensor], depth_range: Tuple[float, float]) -> np.ndarray:
    """
    Jet-раскраска глубины: 1×H×W (метры) -> 3×H×W в [0, 1].
    Невалидные значения (0 или не конечные) становятся черными.
    """
    low, high = float(depth_range[0]), float(depth_range[1])
    if not (np.isfinite(low) and np.isfinite(high)) or high <= low:
        raise ParameterError(f"depth range must satisfy max > min, got ({low}, {high})")
    d = depth.data if isinstance(depth, Tensor) else np.asarray(depth, dtype=np.float64)
    if d.ndim != 3 or d.shape[0] != 1:
        raise DimensionError("depth must be 1×H×W", d.shape)

    plane = d[0]
    valid = np.isfinite(plane) & (plane != 0.0)
    t = (np.clip(np.where(valid, plane, low), low, high) - low) / (high - low)
    colored = np.stack([np.interp(t, _JET_KNOTS, _JET_COLORS[:, c]) for c in range(3)])
    colored[:, ~valid] = 0.0
    return colored


def crop_resize(image: np.ndarray, boxes: Sequence[BoundingBox], size: int) -> np.ndarray:
    """
    Билинейный кроп рамок с ресайзом до size×size.

    Args:
        image: C×H×W
        boxes: рамки в пикселях

    Returns:
        N×C×size×size
    """
    if image.ndim != 3:
        raise DimensionError("crop_resize expects a C×H×W image", image.shape)
    channels = image.shape[0]
    if not boxes:
        return np.zeros((0, channels, size, size))

    coords = np.array([b.as_tuple() for b in boxes], dtype=np.float64)
    steps = (np.arange(size) + 0.5) / size
    # координаты центров пикселей выходного окна в исходном изображении
    ys = coords[:, 1, None] + steps[None, :] * (coords[:, 3] - coords[:, 1])[:, None] - 0.5
    xs = coords[:, 0, None] + steps[None, :] * (coords[:, 2] - coords[:, 0])[:, None] - 0.5
    grid_y = np.broadcast_to(ys[:, :, None], (len(boxes), size, size))
    grid_x = np.broadcast_to(xs[:, None, :], (len(boxes), size, size))
    sample_at = np.stack([grid_y.reshape(-1), grid_x.reshape(-1)])

    out = np.empty((len(boxes), channels, size, size))
    for c in range(channels):
        sampled = ndimage.map_coordinates(image[c], sample_at, order=1, mode="nearest")
        out[:, c] = sampled.reshape(len(boxes), size, size)
    return out


def modality_image(
    frame: MultimodalFrame,
    modality: str,
    depth_range: Tuple[float, float],
) -> np.ndarray:
    """Полнокадровый вход эксперта: для глубины - jet-раскраска"""
    image = frame.modality(modality)
    if image is None:
        raise InputError(f"frame {frame.frame_index} has no modality '{modality}'")
    if modality == "depth":
        return colorize_depth(image, depth_range)
    return image


def prepare_windows(
    frame: MultimodalFrame,
    modalities: Sequence[str],
    boxes: Sequence[BoundingBox],
    window: int,
    depth_range: Tuple[float, float],
) -> Dict[str, np.ndarray]:
    """Кропы всех рамок для каждой модальности: {modality: N×C×window×window}"""
    return {
        m: crop_resize(modality_image(frame, m, depth_range), boxes, window)
        for m in modalities
    }
