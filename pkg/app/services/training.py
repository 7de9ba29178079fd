"""
Двухстадийное обучение.

Стадия 1: каждый эксперт обучается end-to-end на своей модальности.
Стадия 2: гейт (или late-голова) обучается на отдельном разбиении gate-val
при замороженных экспертах и включенном dropout экспертов.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from app.core.exceptions import ConfigurationError, InputError, StateError
from app.models.dataset import MultimodalFrame, get_modality
from app.models.geometry import BoundingBox
from app.models.training import CLASS_NAMES, HUMAN, BACKGROUND, CropDataset, Split, Stage, TrainConfig
from app.nn import Params, Tape, Tensor, cross_entropy_loss, sgd_step
from app.services.evaluation import iou
from app.services.experts import ExpertNet, build_expert, expert_forward, extract_features, prepare_windows
from app.services.fusion import (
    DenseHead,
    FusedModel,
    FusionScheme,
    GatingNet,
    build_gate,
    build_late_head,
    fuse_features,
)

logger = logging.getLogger(__name__)

NEGATIVE_MAX_IOU = 0.3
NEGATIVE_ATTEMPTS = 50
FEATURE_BATCH = 128

# номера подпотоков генератора: (seed, стадия, индекс)
_STREAM_EXPERTS = 1
_STREAM_FUSION = 2
_STREAM_CHANNEL = 3

BatchLoss = Callable[[np.ndarray], Tensor]


# --------------------
# Кропы
# --------------------

def _feasible_scales(frame_size: Tuple[int, int], scales: Sequence[int], aspect: float) -> List[int]:
    height, width = frame_size
    return [s for s in scales if 0 < s <= height and 0 < max(1, round(s * aspect)) <= width]


def _sample_negative(
    rng: np.random.Generator,
    frame: MultimodalFrame,
    scales: List[int],
    aspect: float,
) -> Optional[BoundingBox]:
    height, width = frame.size
    for _ in range(NEGATIVE_ATTEMPTS):
        s = scales[int(rng.integers(len(scales)))]
        w = max(1, round(s * aspect))
        x = int(rng.integers(0, width - w + 1))
        y = int(rng.integers(0, height - s + 1))
        box = BoundingBox(x_min=x, y_min=y, x_max=x + w, y_max=y + s)
        if all(iou(box, a.box) < NEGATIVE_MAX_IOU for a in frame.annotations):
            return box
    return None


def extract_crops(
    frames: Iterable[MultimodalFrame],
    modalities: Sequence[str],
    negatives_per_frame: int,
    rng: np.random.Generator,
    window: int = 32,
    scales: Sequence[int] = (32, 48, 64),
    aspect: float = 0.5,
    depth_range: Tuple[float, float] = (0.5, 10.0),
    split: Split = Split.TRAIN,
) -> CropDataset:
    """
    Позитивы - неперекрытые рамки разметки, негативы - случайные окна
    с IoU < 0.3 ко всем рамкам кадра. Все кропы приводятся к window×window.
    """
    if negatives_per_frame < 0:
        raise ConfigurationError(f"negatives_per_frame must be non-negative, got {negatives_per_frame}")
    channels = {m: get_modality(m).channel_count for m in modalities}
    parts = {m: [] for m in modalities}
    labels: List[int] = []
    frame_indices: List[int] = []
    skipped_frames = 0
    skipped_negatives = 0

    for frame in frames:
        feasible = _feasible_scales(frame.size, scales, aspect)
        if not feasible or min(frame.size) < 1:
            skipped_frames += 1
            continue
        positives = [a.box for a in frame.annotations if not a.occluded]
        negatives = []
        for _ in range(negatives_per_frame):
            box = _sample_negative(rng, frame, feasible, aspect)
            if box is None:
                skipped_negatives += 1
            else:
                negatives.append(box)
        boxes = positives + negatives
        if not boxes:
            continue
        windows = prepare_windows(frame, modalities, boxes, window, depth_range)
        for m in modalities:
            parts[m].append(windows[m])
        labels += [HUMAN] * len(positives) + [BACKGROUND] * len(negatives)
        frame_indices += [frame.frame_index] * len(boxes)

    if skipped_frames:
        logger.warning(f"Пропущено кадров меньше окна: {skipped_frames}")
    if skipped_negatives:
        logger.warning(f"Не удалось выбрать негативов: {skipped_negatives}")

    crops = {
        m: np.concatenate(parts[m]) if parts[m] else np.zeros((0, channels[m], window, window))
        for m in modalities
    }
    one_hot = np.eye(len(CLASS_NAMES))[np.asarray(labels, dtype=int)] if labels else np.zeros((0, len(CLASS_NAMES)))
    dataset = CropDataset(
        crops=crops,
        labels=one_hot,
        frame_indices=np.asarray(frame_indices, dtype=np.int64),
        split=split,
        skipped_frames=skipped_frames,
        window=window,
        skipped_negatives=skipped_negatives,
    )
    logger.info(f"Кропы {split.value}: {len(dataset)} ({dataset.class_counts})")
    return dataset


# --------------------
# Цикл обучения
# --------------------

def fit(
    params: Params,
    batch_loss: BatchLoss,
    sample_count: int,
    config: TrainConfig,
    rng: np.random.Generator,
    description: str,
    progress: bool = False,
) -> List[float]:
    """
    SGD по эпохам с перемешиванием на каждой эпохе.

    Returns:
        Средняя потеря по каждой эпохе
    """
    if sample_count == 0:
        raise InputError(f"{description}: empty training set")
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(sample_count)
        total = 0.0
        starts = range(0, sample_count, config.batch_size)
        for start in tqdm(starts, desc=f"{description} {epoch + 1}/{config.epochs}",
                          disable=not progress, leave=False):
            indices = order[start:start + config.batch_size]
            with Tape() as tape:
                loss = batch_loss(indices)
                tape.backward(loss)
            sgd_step(params, config.learning_rate, config.momentum)
            total += loss.item() * len(indices)
        mean_loss = total / sample_count
        history.append(mean_loss)
        logger.info(f"{description}: эпоха {epoch + 1}/{config.epochs}, средняя потеря {mean_loss:.4f}")
    return history


def _require_stage(config: TrainConfig, stage: Stage) -> None:
    if config.stage != stage:
        raise StateError(f"training step needs stage '{stage.value}', got '{config.stage.value}'")


def _train_network(
    crops: CropDataset,
    modalities: Tuple[str, ...],
    config: TrainConfig,
    stream: Tuple[int, int],
    progress: bool,
) -> ExpertNet:
    rng = np.random.default_rng([config.seed, *stream])
    channels = sum(get_modality(m).channel_count for m in modalities)
    net = build_expert(modalities, (channels, crops.window, crops.window), len(CLASS_NAMES), rng,
                       dropout_rate=config.dropout_rate, seed=config.seed)
    labels = crops.labels

    def batch_loss(indices: np.ndarray) -> Tensor:
        x = Tensor(crops.stacked(indices, modalities))
        output = expert_forward(net, x, training=True, rng=rng)
        return cross_entropy_loss(output.posterior, Tensor(labels[indices]))

    net.loss_history = fit(net.params, batch_loss, len(crops), config, rng,
                           f"эксперт {net.modality}", progress)
    return net


def train_experts(
    crops: CropDataset,
    modalities: Sequence[str],
    config: TrainConfig,
    threads: int = 1,
    progress: bool = False,
) -> List[ExpertNet]:
    """
    Стадия 1: эксперты обучаются независимо (по потоку на эксперта),
    каждый со своим подпотоком генератора.
    """
    _require_stage(config, Stage.EXPERTS)
    if len(crops) == 0:
        raise InputError("cannot train experts on an empty crop dataset")

    def job(item):
        index, modality = item
        return _train_network(crops, (modality,), config, (_STREAM_EXPERTS, index), progress)

    workers = max(1, min(threads, len(modalities)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        experts = list(pool.map(job, enumerate(modalities)))
    for expert in experts:
        expert.params.freeze()
    return experts


def precompute_features(expert: ExpertNet, crops: CropDataset) -> np.ndarray:
    """Карты признаков эксперта (до dropout) для всех кропов"""
    batches = []
    for start in range(0, len(crops), FEATURE_BATCH):
        indices = np.arange(start, min(start + FEATURE_BATCH, len(crops)))
        x = Tensor(crops.stacked(indices, expert.modalities))
        batches.append(extract_features(expert, x).data)
    if not batches:
        return np.zeros((0,) + expert.feature_shape)
    return np.concatenate(batches)


def _check_frozen(experts: Sequence[ExpertNet]) -> None:
    for expert in experts:
        if expert.params.any_trainable():
            raise StateError(f"expert '{expert.modality}' has trainable parameters during fusion training")


def fusion_loss(model: FusedModel, features: Sequence[np.ndarray], labels: np.ndarray) -> float:
    """Потеря слитой модели без dropout на всем наборе"""
    fused, _ = fuse_features(model, [Tensor(f) for f in features], training=False)
    return cross_entropy_loss(fused, Tensor(labels)).item()


def _train_fusion_head(
    experts: Sequence[ExpertNet],
    crops: CropDataset,
    config: TrainConfig,
    scheme: FusionScheme,
    progress: bool,
):
    _require_stage(config, Stage.FUSION)
    _check_frozen(experts)
    if not experts:
        raise InputError("fusion training needs at least one expert")
    if len(crops) == 0:
        raise InputError("cannot train fusion on an empty crop dataset")

    rng = np.random.default_rng([config.seed, _STREAM_FUSION, list(FusionScheme).index(scheme)])
    features = [precompute_features(e, crops) for e in experts]
    input_dim = sum(e.feature_length for e in experts)
    if scheme == FusionScheme.MODE:
        head = build_gate(input_dim, len(experts), rng, dropout_rate=config.dropout_rate)
        model = FusedModel(experts=list(experts), scheme=scheme, gate=head)
    else:
        head = build_late_head(input_dim, experts[0].class_count, rng, dropout_rate=config.dropout_rate)
        model = FusedModel(experts=list(experts), scheme=scheme, head=head)

    labels = crops.labels
    baseline = FusedModel(experts=list(experts), scheme=FusionScheme.AVERAGE)
    baseline_loss = fusion_loss(baseline, features, labels)

    def batch_loss(indices: np.ndarray) -> Tensor:
        fused, _ = fuse_features(model, [Tensor(f[indices]) for f in features], training=True, rng=rng)
        return cross_entropy_loss(fused, Tensor(labels[indices]))

    head.loss_history = fit(head.params, batch_loss, len(crops), config, rng, scheme.value, progress)
    trained_loss = fusion_loss(model, features, labels)
    logger.info(
        f"Потеря {scheme.value} на {crops.split.value}: {trained_loss:.4f} "
        f"(усреднение: {baseline_loss:.4f})"
    )
    return head


def train_gate(
    experts: Sequence[ExpertNet],
    crops: CropDataset,
    config: TrainConfig,
    progress: bool = False,
) -> GatingNet:
    """
    Стадия 2: обучение гейта через mode_combine при замороженных экспертах.

    Raises:
        StateError: у эксперта есть обучаемые параметры
    """
    return _train_fusion_head(experts, crops, config, FusionScheme.MODE, progress)


def train_late_head(
    experts: Sequence[ExpertNet],
    crops: CropDataset,
    config: TrainConfig,
    progress: bool = False,
) -> DenseHead:
    return _train_fusion_head(experts, crops, config, FusionScheme.LATE, progress)


def train_channel_net(
    crops: CropDataset,
    channel_order: Sequence[str],
    config: TrainConfig,
    progress: bool = False,
) -> ExpertNet:
    """Одна сеть над модальностями, сложенными по каналам, по протоколу стадии 1"""
    _require_stage(config, Stage.EXPERTS)
    if len(crops) == 0:
        raise InputError("cannot train the channel network on an empty crop dataset")
    net = _train_network(crops, tuple(channel_order), config, (_STREAM_CHANNEL, 0), progress)
    net.params.freeze()
    return net


def train_baseline(
    scheme: FusionScheme,
    crops: CropDataset,
    config: TrainConfig,
    experts: Optional[Sequence[ExpertNet]] = None,
    channel_order: Optional[Sequence[str]] = None,
    progress: bool = False,
) -> FusedModel:
    """Late fusion (стадия 2 над замороженными экспертами) или channel fusion (стадия 1)"""
    scheme = FusionScheme(scheme)
    if scheme == FusionScheme.LATE:
        if not experts:
            raise InputError("late fusion needs trained experts")
        head = train_late_head(experts, crops, config, progress)
        return FusedModel(experts=list(experts), scheme=scheme, head=head)
    if scheme == FusionScheme.CHANNEL:
        order = tuple(channel_order or crops.modalities)
        net = train_channel_net(crops, order, config, progress)
        return FusedModel(experts=[], scheme=scheme, channel_net=net, channel_order=order)
    raise ConfigurationError(f"'{scheme.value}' is not a trainable baseline scheme")
