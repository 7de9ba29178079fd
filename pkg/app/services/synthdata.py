"""
Генератор синтетических мультимодальных последовательностей.

Люди (эллипс головы + прямоугольник тела) движутся по линейным траекториям
с отражением от краев кадра поверх текстурированного фона. Чистые rgb/depth
рендерятся детерминированно, затем активный режим окружения портит модальности,
а канал движения считается по паре испорченных rgb-кадров.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from app.core.exceptions import ConfigurationError, DimensionError
from app.models.dataset import (
    Annotation,
    DepthNoise,
    EnvironmentRegime,
    MultimodalFrame,
    RgbNoise,
    get_regime,
)
from app.models.geometry import BoundingBox

logger = logging.getLogger(__name__)

MIN_ACTOR_HEIGHT = 32
MAX_ACTOR_HEIGHT = 56
ACTOR_DEPTH_RANGE = (3.5, 7.0)
BACKGROUND_DEPTH_RANGE = (8.0, 9.5)
OCCLUSION_THRESHOLD = 0.4
HEAD_FRACTION = 0.25
HEAD_WIDTH_FRACTION = 0.6
MIN_SPECKLED_DEPTH = 0.01

RegimeLike = Union[EnvironmentRegime, str]


@dataclass(frozen=True)
class Actor:
    """Человек на линейной траектории"""

    track_id: int
    width: int
    height: int
    depth: float
    origin: Tuple[float, float]
    velocity: Tuple[float, float]
    texture: np.ndarray  # 3×h×w
    mask: np.ndarray  # h×w

    def position(self, frame_index: int, frame_size: Tuple[int, int]) -> Tuple[int, int]:
        """Левый верхний угол на кадре; отражение от границ"""
        height, width = frame_size
        return (
            _reflect(self.origin[0] + self.velocity[0] * frame_index, width - self.width),
            _reflect(self.origin[1] + self.velocity[1] * frame_index, height - self.height),
        )


def _reflect(value: float, span: int) -> int:
    if span <= 0:
        return 0
    period = 2 * span
    p = value % period
    return int(round(p if p <= span else period - p))


def actor_mask(height: int, width: int) -> np.ndarray:
    """Силуэт: эллипс головы в верхней четверти и прямоугольник тела"""
    mask = np.zeros((height, width), dtype=bool)
    head_h = max(1, int(round(height * HEAD_FRACTION)))
    mask[head_h:, :] = True
    rows = (np.arange(head_h) + 0.5 - head_h / 2.0) / (head_h / 2.0)
    cols = (np.arange(width) + 0.5 - width / 2.0) / (width * HEAD_WIDTH_FRACTION / 2.0)
    mask[:head_h] = rows[:, None] ** 2 + cols[None, :] ** 2 <= 1.0
    return mask


def _make_actor(track_id: int, rng: np.random.Generator, frame_size: Tuple[int, int]) -> Actor:
    height_px = int(rng.integers(MIN_ACTOR_HEIGHT, MAX_ACTOR_HEIGHT + 1))
    width_px = height_px // 2
    frame_h, frame_w = frame_size
    if height_px > frame_h or width_px > frame_w:
        raise ConfigurationError(
            f"actor of {width_px}x{height_px} px does not fit a {frame_w}x{frame_h} frame"
        )
    depth = float(rng.uniform(*ACTOR_DEPTH_RANGE))
    origin = (float(rng.uniform(0, frame_w - width_px)), float(rng.uniform(0, frame_h - height_px)))
    speed_x = float(rng.uniform(0.5, 2.0)) * (1 if rng.random() < 0.5 else -1)
    speed_y = float(rng.uniform(-0.5, 0.5))

    shirt = rng.uniform(0.15, 0.95, size=3)
    skin = np.array([0.85, 0.65, 0.5]) * rng.uniform(0.7, 1.1)
    texture = np.empty((3, height_px, width_px))
    head_h = max(1, int(round(height_px * HEAD_FRACTION)))
    stripes = 0.08 * np.sin(np.arange(height_px) * 0.9)[:, None]
    texture[:, :head_h] = np.clip(skin, 0, 1)[:, None, None]
    texture[:, head_h:] = np.clip(shirt[:, None, None] + stripes[None, head_h:], 0, 1)
    texture += rng.normal(0, 0.02, size=texture.shape)
    return Actor(
        track_id=track_id,
        width=width_px,
        height=height_px,
        depth=depth,
        origin=origin,
        velocity=(speed_x, speed_y),
        texture=np.clip(texture, 0, 1),
        mask=actor_mask(height_px, width_px),
    )


def _render_background(rng: np.random.Generator, frame_size: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    height, width = frame_size
    base = rng.uniform(0.3, 0.7, size=3)
    noise = ndimage.gaussian_filter(rng.normal(0, 1, size=(3, height, width)), sigma=(0, 3, 3))
    noise /= max(np.abs(noise).max(), 1e-9)
    rgb = np.clip(base[:, None, None] + 0.2 * noise, 0, 1)

    far, near = BACKGROUND_DEPTH_RANGE[1], BACKGROUND_DEPTH_RANGE[0]
    rows = np.linspace(far, near, height)[:, None] * np.ones((1, width))
    depth = rows + 0.05 * noise[0]
    return rgb, depth[np.newaxis]


def occlusion_flags(boxes: Sequence[BoundingBox], depths: Sequence[float]) -> List[bool]:
    """Дальний из двух перекрывающихся людей помечается, если перекрыто > 40% его рамки"""
    flags = [False] * len(boxes)
    for i, box_i in enumerate(boxes):
        for j, box_j in enumerate(boxes):
            if i == j or depths[j] >= depths[i]:
                continue
            if box_i.intersection(box_j) / box_i.area > OCCLUSION_THRESHOLD:
                flags[i] = True
    return flags


@dataclass
class SceneRenderer:
    """Чистый рендер сцены как чистая функция номера кадра"""

    frame_size: Tuple[int, int]
    actors: List[Actor]
    background_rgb: np.ndarray
    background_depth: np.ndarray

    @classmethod
    def create(cls, frame_size: Tuple[int, int], actor_count: int, seed: int) -> "SceneRenderer":
        if actor_count < 0:
            raise ConfigurationError(f"actor_count must be non-negative, got {actor_count}")
        rng = np.random.default_rng([seed, 0])
        background_rgb, background_depth = _render_background(rng, frame_size)
        actors = [_make_actor(track_id, rng, frame_size) for track_id in range(actor_count)]
        return cls(frame_size, actors, background_rgb, background_depth)

    def render(self, frame_index: int) -> Tuple[np.ndarray, np.ndarray, List[Annotation]]:
        rgb = self.background_rgb.copy()
        depth = self.background_depth.copy()

        placed = []
        for actor in self.actors:
            x, y = actor.position(frame_index, self.frame_size)
            box = BoundingBox(x_min=x, y_min=y, x_max=x + actor.width, y_max=y + actor.height)
            placed.append((actor, x, y, box))

        # от дальних к ближним
        for actor, x, y, _ in sorted(placed, key=lambda item: -item[0].depth):
            region = (slice(y, y + actor.height), slice(x, x + actor.width))
            rgb[:, region[0], region[1]][:, actor.mask] = actor.texture[:, actor.mask]
            depth[0, region[0], region[1]][actor.mask] = actor.depth

        boxes = [box for _, _, _, box in placed]
        flags = occlusion_flags(boxes, [a.depth for a, _, _, _ in placed])
        annotations = [
            Annotation(box=box, occluded=flag, track_id=actor.track_id)
            for (actor, _, _, box), flag in zip(placed, flags)
        ]
        return rgb, depth, annotations

    def actor_pixels(self, frame_index: int) -> np.ndarray:
        """Маска пикселей, занятых людьми (H×W)"""
        mask = np.zeros(self.frame_size, dtype=bool)
        for actor in self.actors:
            x, y = actor.position(frame_index, self.frame_size)
            mask[y:y + actor.height, x:x + actor.width] |= actor.mask
        return mask


# --------------------
# Порча модальностей
# --------------------

def motion_channel(prev_rgb: np.ndarray, cur_rgb: np.ndarray) -> np.ndarray:
    """Средняя по каналам абсолютная разность кадров: 1×H×W в [0, 1]"""
    if prev_rgb.shape != cur_rgb.shape:
        raise DimensionError("motion_channel needs equal shapes", prev_rgb.shape, cur_rgb.shape)
    diff = np.abs(cur_rgb - prev_rgb).mean(axis=0, keepdims=True)
    return np.clip(diff, 0.0, 1.0)


def _corrupt_rgb(rgb: np.ndarray, noise: RgbNoise, rng: np.random.Generator) -> np.ndarray:
    if noise == RgbNoise():
        return rgb.copy()
    out = noise.brightness * (noise.contrast * (rgb - 0.5) + 0.5)
    if noise.sigma > 0:
        out = out + rng.normal(0.0, noise.sigma, size=rgb.shape)
    out = np.clip(out, 0.0, 1.0)
    if noise.blur_kernel > 1:
        out = ndimage.uniform_filter(out, size=(1, noise.blur_kernel, noise.blur_kernel), mode="nearest")
    return out


def _corrupt_depth(depth: np.ndarray, noise: DepthNoise, rng: np.random.Generator) -> np.ndarray:
    if noise == DepthNoise():
        return depth.copy()
    invalid = depth > noise.max_range
    if noise.dropout > 0:
        invalid |= rng.random(depth.shape) < noise.dropout
    out = depth
    if noise.speckle_sigma > 0:
        out = np.maximum(depth * (1.0 + rng.normal(0.0, noise.speckle_sigma, size=depth.shape)),
                         MIN_SPECKLED_DEPTH)
    return np.where(invalid | (depth == 0.0), 0.0, out)


def corrupt_modality(
    frame: MultimodalFrame,
    regime: RegimeLike,
    rng: np.random.Generator,
    previous_rgb: Optional[np.ndarray] = None,
) -> MultimodalFrame:
    """
    Применяет режим окружения к чистому кадру.

    Канал движения пересчитывается по паре (previous_rgb, испорченный rgb);
    без предыдущего кадра сохраняется исходный канал движения.
    """
    regime = get_regime(regime) if isinstance(regime, str) else regime
    rgb = _corrupt_rgb(frame.rgb, regime.rgb_noise, rng)
    depth = _corrupt_depth(frame.depth, regime.depth_noise, rng)
    motion = motion_channel(previous_rgb, rgb) if previous_rgb is not None else frame.motion.copy()
    return MultimodalFrame(
        rgb=rgb,
        depth=depth,
        motion=motion,
        annotations=list(frame.annotations),
        regime=regime.name,
        frame_index=frame.frame_index,
    )


# --------------------
# Сценарий режимов
# --------------------

def resolve_script(
    regime_script: Sequence[Tuple[int, RegimeLike]],
    script_cycle: int = 0,
) -> List[Tuple[int, EnvironmentRegime]]:
    """Проверяет сценарий: начинается с кадра 0, начала строго возрастают"""
    if not regime_script:
        raise ConfigurationError("regime script must not be empty")
    resolved = [(int(start), get_regime(r) if isinstance(r, str) else r) for start, r in regime_script]
    starts = [start for start, _ in resolved]
    if starts[0] != 0:
        raise ConfigurationError(f"regime script must start at frame 0, got {starts[0]}")
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise ConfigurationError(f"regime script starts must strictly increase, got {starts}")
    if script_cycle and starts[-1] >= script_cycle:
        raise ConfigurationError(
            f"regime script start {starts[-1]} does not fit script cycle {script_cycle}"
        )
    return resolved


def regime_at(script: Sequence[Tuple[int, EnvironmentRegime]], frame_index: int, script_cycle: int = 0) -> EnvironmentRegime:
    position = frame_index % script_cycle if script_cycle else frame_index
    active = script[0][1]
    for start, regime in script:
        if start > position:
            break
        active = regime
    return active


def generate_sequence(
    frame_count: int,
    regime_script: Sequence[Tuple[int, RegimeLike]],
    size: Tuple[int, int],
    actor_count: int,
    seed: int,
    script_cycle: int = 0,
    threads: int = 1,
) -> List[MultimodalFrame]:
    """
    Генерирует детерминированную последовательность кадров.

    Args:
        frame_count: Число кадров
        regime_script: [(начальный кадр, режим), ...]
        size: (H, W)
        actor_count: Число людей
        seed: Зерно; кадр k использует подпоток (seed, k)
        script_cycle: Период повторения сценария (0 - без повторения)
        threads: Число потоков для рендера кадров

    Raises:
        ConfigurationError: битый сценарий или человек больше кадра
    """
    if frame_count < 0:
        raise ConfigurationError(f"frame_count must be non-negative, got {frame_count}")
    script = resolve_script(regime_script, script_cycle)
    frame_size = (int(size[0]), int(size[1]))
    renderer = SceneRenderer.create(frame_size, actor_count, seed)
    blank_motion = np.zeros((1,) + frame_size)

    def build(frame_index: int) -> MultimodalFrame:
        rgb, depth, annotations = renderer.render(frame_index)
        clean = MultimodalFrame(rgb=rgb, depth=depth, motion=blank_motion,
                                annotations=annotations, frame_index=frame_index)
        rng = np.random.default_rng([seed, 1, frame_index])
        return corrupt_modality(clean, regime_at(script, frame_index, script_cycle), rng)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        frames = list(pool.map(build, range(frame_count)))

    for prev, cur in zip(frames, frames[1:]):
        cur.motion = motion_channel(prev.rgb, cur.rgb)

    logger.info(
        f"Сгенерировано {frame_count} кадров {frame_size[1]}x{frame_size[0]}, "
        f"людей: {actor_count}, режимов в сценарии: {len(script)}"
    )
    return frames
