"""
Модели обучения: гиперпараметры стадии и наборы кропов.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Sequence

import numpy as np
from pydantic import BaseModel, Field

from app.core.exceptions import DimensionError, InputError

CLASS_NAMES = ("background", "human")
BACKGROUND = 0
HUMAN = 1


class Stage(str, Enum):
    EXPERTS = "experts"
    FUSION = "fusion"


class Split(str, Enum):
    TRAIN = "train"
    GATE_VAL = "gate-val"
    TEST = "test"
    ALL = "all"


class TrainConfig(BaseModel):
    """Гиперпараметры одной стадии обучения"""

    learning_rate: float = Field(0.01, ge=0.0)
    momentum: float = Field(0.9, ge=0.0)
    batch_size: int = Field(64, gt=0)
    epochs: int = Field(10, gt=0)
    dropout_rate: float = Field(0.5, ge=0.0, lt=1.0)
    seed: int = Field(7, ge=0)
    stage: Stage = Stage.EXPERTS


@dataclass
class CropDataset:
    """
    Кропы окон по модальностям с one-hot метками.

    crops[modality] имеет форму N×C×S×S (float64), labels - N×2.
    """

    crops: Dict[str, np.ndarray]
    labels: np.ndarray
    frame_indices: np.ndarray
    split: Split = Split.TRAIN
    skipped_frames: int = 0
    window: int = 32
    skipped_negatives: int = field(default=0)

    def __post_init__(self):
        n = len(self.labels)
        if self.labels.ndim != 2 or self.labels.shape[1] != len(CLASS_NAMES):
            raise DimensionError("labels must be N×2 one-hot", self.labels.shape)
        if len(self.frame_indices) != n:
            raise DimensionError("frame_indices must match labels", self.frame_indices.shape, self.labels.shape)
        for name, array in self.crops.items():
            if array.ndim != 4 or array.shape[0] != n or array.shape[2:] != (self.window, self.window):
                raise DimensionError(f"crops for '{name}' must be N×C×{self.window}×{self.window}",
                                     array.shape, self.labels.shape)

    def __len__(self) -> int:
        return int(len(self.labels))

    @property
    def modalities(self) -> List[str]:
        return list(self.crops)

    @property
    def class_counts(self) -> Dict[str, int]:
        counts = self.labels.sum(axis=0).astype(int) if len(self) else np.zeros(len(CLASS_NAMES), dtype=int)
        return {name: int(c) for name, c in zip(CLASS_NAMES, counts)}

    def batch(self, indices: np.ndarray, modality: str) -> np.ndarray:
        """Кропы модальности для индексов в float64"""
        try:
            return self.crops[modality][indices].astype(np.float64)
        except KeyError:
            raise InputError(f"crop dataset has no modality '{modality}'")

    def stacked(self, indices: np.ndarray, order: Sequence[str]) -> np.ndarray:
        """Модальности, сложенные по оси каналов в заданном порядке"""
        return np.concatenate([self.batch(indices, m) for m in order], axis=1)
