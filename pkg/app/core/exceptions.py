"""
Кастомные исключения для приложения.

Каждое исключение несет код завершения процесса (аналог HTTP-статуса):
2 - ошибка конфигурации, 3 - ошибка зависимостей, 4 - ошибка данных.
"""
from pathlib import Path
from typing import Optional, Sequence


EXIT_CONFIG_ERROR = 2
EXIT_DEPENDENCY_ERROR = 3
EXIT_DATA_ERROR = 4


class FusionLabError(Exception):
    """Базовое исключение для Sensor Fusion Lab"""

    exit_code: int = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


class ConfigurationError(FusionLabError):
    """Ошибка конфигурации (ключи, значения, архитектура)"""

    exit_code = EXIT_CONFIG_ERROR


class DependencyError(FusionLabError):
    """Отсутствуют или повреждены необходимые чекпоинты"""

    exit_code = EXIT_DEPENDENCY_ERROR


class DataError(FusionLabError):
    """Базовая ошибка данных"""

    exit_code = EXIT_DATA_ERROR


class DimensionError(DataError):
    """Несовпадение размерностей"""

    def __init__(self, detail: str, *shapes: Sequence[int]):
        if shapes:
            rendered = " vs ".join(str(tuple(s)) for s in shapes)
            detail = f"{detail}: {rendered}"
        super().__init__(detail=detail)
        self.shapes = [tuple(s) for s in shapes]


class ParameterError(DataError):
    """Недопустимое значение численного параметра"""


class InputError(DataError):
    """Некорректные входные данные"""


class StateError(DataError):
    """Недопустимое состояние параметров модели"""


class DeterminismError(DataError):
    """Функция потерь не детерминирована"""

    def __init__(self, first: float, second: float):
        super().__init__(
            detail=(
                f"Loss function is not deterministic: two baseline calls "
                f"returned {first!r} and {second!r}"
            )
        )


class ParseError(DataError):
    """Ошибка разбора файла"""

    def __init__(self, path: Path, offset: int, reason: str):
        detail = f"Failed to parse '{path}' at byte offset {offset}: {reason}"
        super().__init__(detail=detail)
        self.path = Path(path)
        self.offset = offset


class DatasetValidationError(DataError):
    """Нарушение инвариантов датасета"""
