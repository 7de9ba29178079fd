"""
Модели мультимодальных кадров, разметки и режимов окружения.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.core.exceptions import ConfigurationError, DimensionError, InputError
from app.models.geometry import BoundingBox


class ModalityId(str, Enum):
    """Идентификаторы модальностей"""
    RGB = "rgb"
    DEPTH = "depth"
    MOTION = "motion"


class Modality(BaseModel):
    model_config = ConfigDict(frozen=True)

    identifier: ModalityId
    channel_count: int = Field(gt=0, description="Число каналов на входе эксперта")


# depth подается эксперту после jet-раскраски, поэтому 3 канала
MODALITIES: Dict[str, Modality] = {
    "rgb": Modality(identifier=ModalityId.RGB, channel_count=3),
    "depth": Modality(identifier=ModalityId.DEPTH, channel_count=3),
    "motion": Modality(identifier=ModalityId.MOTION, channel_count=1),
}


def get_modality(name: str) -> Modality:
    try:
        return MODALITIES[str(getattr(name, "value", name))]
    except KeyError:
        raise InputError(f"unknown modality '{name}', expected one of {sorted(MODALITIES)}")


class RgbNoise(BaseModel):
    model_config = ConfigDict(frozen=True)

    brightness: float = Field(1.0, gt=0.0)
    contrast: float = Field(1.0, gt=0.0)
    sigma: float = Field(0.0, ge=0.0)
    blur_kernel: int = Field(1, ge=1, description="Размер box-фильтра; 1 - без размытия")


class DepthNoise(BaseModel):
    model_config = ConfigDict(frozen=True)

    dropout: float = Field(0.0, ge=0.0, le=1.0)
    max_range: float = Field(math.inf, gt=0.0, description="Максимальная надежная дальность, м")
    speckle_sigma: float = Field(0.0, ge=0.0)


class EnvironmentRegime(BaseModel):
    """Условия окружения, определяющие порчу модальностей"""

    model_config = ConfigDict(frozen=True)

    name: str
    rgb_noise: RgbNoise = Field(default_factory=RgbNoise)
    depth_noise: DepthNoise = Field(default_factory=DepthNoise)


CANONICAL_REGIMES: Dict[str, EnvironmentRegime] = {
    "bright-indoor": EnvironmentRegime(
        name="bright-indoor",
        rgb_noise=RgbNoise(brightness=1.0, contrast=1.0, sigma=0.02, blur_kernel=1),
        depth_noise=DepthNoise(dropout=0.02, max_range=10.0, speckle_sigma=0.02),
    ),
    # темно: RGB почти без сигнала, глубина в порядке
    "dark-indoor": EnvironmentRegime(
        name="dark-indoor",
        rgb_noise=RgbNoise(brightness=0.1, contrast=0.5, sigma=0.05, blur_kernel=1),
        depth_noise=DepthNoise(dropout=0.02, max_range=10.0, speckle_sigma=0.02),
    ),
    # улица: люди дальше надежной дальности сенсора глубины
    "bright-outdoor": EnvironmentRegime(
        name="bright-outdoor",
        rgb_noise=RgbNoise(brightness=1.1, contrast=1.0, sigma=0.02, blur_kernel=1),
        depth_noise=DepthNoise(dropout=0.3, max_range=3.0, speckle_sigma=0.05),
    ),
    "blur": EnvironmentRegime(
        name="blur",
        rgb_noise=RgbNoise(brightness=0.9, contrast=0.9, sigma=0.03, blur_kernel=5),
        depth_noise=DepthNoise(dropout=0.1, max_range=8.0, speckle_sigma=0.05),
    ),
}


def identity_regime() -> EnvironmentRegime:
    """Режим без искажений"""
    return EnvironmentRegime(name="identity")


def get_regime(name: str) -> EnvironmentRegime:
    if name == "identity":
        return identity_regime()
    try:
        return CANONICAL_REGIMES[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown regime '{name}', expected one of {sorted(CANONICAL_REGIMES)}"
        )


class Annotation(BaseModel):
    """Разметка человека на кадре"""

    model_config = ConfigDict(frozen=True)

    box: BoundingBox
    occluded: bool = False
    track_id: int = 0


@dataclass
class MultimodalFrame:
    """Выровненные изображения модальностей + разметка + режим"""

    rgb: np.ndarray  # 3×H×W в [0, 1]
    depth: np.ndarray  # 1×H×W, метры, 0 = нет данных
    motion: np.ndarray  # 1×H×W в [0, 1]
    annotations: List[Annotation] = field(default_factory=list)
    regime: str = "identity"
    frame_index: int = 0

    def __post_init__(self):
        if self.rgb.ndim != 3 or self.rgb.shape[0] != 3:
            raise DimensionError("rgb must be 3×H×W", self.rgb.shape)
        size = self.rgb.shape[1:]
        for name in ("depth", "motion"):
            image = getattr(self, name)
            if image.ndim != 3 or image.shape[0] != 1 or image.shape[1:] != size:
                raise DimensionError(f"{name} must be 1×H×W matching rgb", image.shape, self.rgb.shape)

    @property
    def size(self) -> tuple:
        return tuple(self.rgb.shape[1:])

    def modality(self, name: str) -> Optional[np.ndarray]:
        return getattr(self, str(getattr(name, "value", name)), None)
