import logging
from typing import Iterable, Sequence, Tuple

from app.core.exceptions import DatasetValidationError, DimensionError
from app.models.dataset import Annotation, MultimodalFrame

logger = logging.getLogger(__name__)


class DatasetValidator:
    """Валидатор кадров и разметки датасета"""

    @staticmethod
    def validate_annotation(annotation: Annotation, frame_size: Tuple[int, int], frame_index: int) -> None:
        """
        Проверяет, что рамка лежит в пределах кадра.

        Raises:
            DatasetValidationError: рамка выходит за границы
        """
        height, width = frame_size
        if not annotation.box.inside(height, width):
            raise DatasetValidationError(
                f"annotation track {annotation.track_id} in frame {frame_index} "
                f"lies outside the {width}x{height} image: {annotation.box.as_tuple()}"
            )

    @staticmethod
    def validate_frame(frame: MultimodalFrame, frame_size: Tuple[int, int]) -> None:
        if frame.size != tuple(frame_size):
            raise DimensionError(f"frame {frame.frame_index} size mismatch", frame.size, frame_size)
        for annotation in frame.annotations:
            DatasetValidator.validate_annotation(annotation, frame_size, frame.frame_index)

    @staticmethod
    def validate_sequence(frames: Sequence[MultimodalFrame], frame_size: Tuple[int, int]) -> None:
        """Проверяет все кадры и уникальность номеров"""
        seen = set()
        for frame in frames:
            if frame.frame_index in seen:
                raise DatasetValidationError(f"duplicate frame index {frame.frame_index}")
            seen.add(frame.frame_index)
            DatasetValidator.validate_frame(frame, frame_size)
        logger.debug(f"Датасет валиден: {len(frames)} кадров")

    @staticmethod
    def validate_disjoint(*groups: Iterable[int]) -> None:
        """Разбиения не должны пересекаться по кадрам"""
        seen = set()
        for group in groups:
            group = set(group)
            overlap = seen & group
            if overlap:
                raise DatasetValidationError(f"splits share frames {sorted(overlap)[:5]}")
            seen |= group
