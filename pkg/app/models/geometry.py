"""
Геометрия ограничивающих рамок.
"""
import math

from pydantic import BaseModel, ConfigDict, Field, model_validator


class BoundingBox(BaseModel):
    """Рамка в пиксельных координатах, полуоткрытая: [x_min, x_max) × [y_min, y_max)"""

    model_config = ConfigDict(frozen=True)

    x_min: float = Field(description="Левая граница")
    y_min: float = Field(description="Верхняя граница")
    x_max: float = Field(description="Правая граница (не включается)")
    y_max: float = Field(description="Нижняя граница (не включается)")

    @model_validator(mode="after")
    def check_area(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError(f"box must have positive area, got {coords}")
        return self

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def intersection(self, other: "BoundingBox") -> float:
        w = min(self.x_max, other.x_max) - max(self.x_min, other.x_min)
        h = min(self.y_max, other.y_max) - max(self.y_min, other.y_min)
        if w <= 0 or h <= 0:
            return 0.0
        return w * h

    def inside(self, height: float, width: float) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height

    def as_tuple(self) -> tuple:
        return (self.x_min, self.y_min, self.x_max, self.y_max)
