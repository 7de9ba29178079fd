"""
Модели детекций и метрик качества.
"""
import math
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.models.geometry import BoundingBox

SIMPLEX_TOLERANCE = 1e-6


class Detection(BaseModel):
    """Оцененное окно: рамка, F[human] и, при наличии, веса гейта"""

    model_config = ConfigDict(frozen=True)

    box: BoundingBox
    score: float = Field(ge=0.0, le=1.0)
    gate: Optional[List[float]] = None
    frame_index: int = Field(0, ge=0)

    @field_validator("gate")
    @classmethod
    def validate_gate(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is None:
            return v
        if not v or min(v) < -SIMPLEX_TOLERANCE or abs(math.fsum(v) - 1.0) > SIMPLEX_TOLERANCE:
            raise ValueError(f"gate must lie on the simplex, got {v}")
        return v


class MatchLabel(str, Enum):
    TRUE_POSITIVE = "tp"
    FALSE_POSITIVE = "fp"
    IGNORED = "ignored"


class MatchResult(BaseModel):
    """Результат сопоставления детекций кадра с разметкой"""

    labels: List[MatchLabel]
    matched_annotation: List[Optional[int]]
    annotation_matched: List[bool]
    false_negatives: int = 0

    @property
    def true_positives(self) -> int:
        return sum(1 for label in self.labels if label == MatchLabel.TRUE_POSITIVE)

    @property
    def false_positives(self) -> int:
        return sum(1 for label in self.labels if label == MatchLabel.FALSE_POSITIVE)

    @property
    def ignored(self) -> int:
        return sum(1 for label in self.labels if label == MatchLabel.IGNORED)


class PRPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    threshold: float
    precision: float = Field(ge=0.0, le=1.0)
    recall: float = Field(ge=0.0, le=1.0)
    true_positives: int = 0
    false_positives: int = 0


class PRCurve(BaseModel):
    """Точки (порог, точность, полнота) по убыванию порога"""

    points: List[PRPoint]
    total_positives: int = Field(gt=0)

    def false_negatives(self, point: PRPoint) -> int:
        return self.total_positives - point.true_positives

    @property
    def precisions(self) -> List[float]:
        return [p.precision for p in self.points]

    @property
    def recalls(self) -> List[float]:
        return [p.recall for p in self.points]


class EqualErrorPoint(BaseModel):
    """Точка равенства точности и полноты"""

    value: float = Field(ge=0.0, le=1.0)
    recall_at_threshold: float = Field(ge=0.0, le=1.0)
    threshold: float
    endpoint: bool = Field(False, description="Кривая не пересекает P = R, взято значение на конце")


class MetricsReport(BaseModel):
    """Итоговые метрики одного прогона оценки"""

    ap: float
    eer: float
    recall_at_eer: float
    iou_threshold: float
    n_frames: int
    n_annotations: int
    n_detections: int = 0
    eer_endpoint: bool = False
    scheme: str = ""
    experts: str = ""
    split: str = ""

    def to_text(self) -> str:
        lines = [f"{key}={value}" for key, value in self.model_dump().items()]
        return "\n".join(lines) + "\n"
