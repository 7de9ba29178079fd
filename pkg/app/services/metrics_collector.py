import time
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional

import psutil

logger = logging.getLogger(__name__)


@dataclass
class RunMetrics:
    """Метрики одного запуска команды"""
    command: str
    duration_sec: float
    subtasks: Dict[str, float] = field(default_factory=dict)
    memory_usage_mb: float = 0.0
    cpu_percent: float = 0.0
    success: bool = True
    error_message: str = ""


class RunMetricsCollector:
    """Сборщик времени выполнения и потребления памяти"""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self._command: Optional[str] = None
        self._start_time: Optional[float] = None
        self._subtasks: Dict[str, float] = {}
        self._open: Dict[str, float] = {}

    def start_run(self, command: str) -> None:
        """Начинает отсчет времени команды"""
        self._command = command
        self._start_time = time.perf_counter()
        self._subtasks = {}
        self._open = {}

    def start_subtask(self, name: str) -> None:
        if self._start_time is None:
            return
        self._open[name] = time.perf_counter()

    def end_subtask(self, name: str) -> None:
        if self._start_time is None or name not in self._open:
            return
        elapsed = time.perf_counter() - self._open.pop(name)
        # повторные подзадачи с одним именем суммируются
        self._subtasks[name] = self._subtasks.get(name, 0.0) + elapsed
        logger.debug(f"Подзадача {name}: {elapsed:.2f} с")

    @contextmanager
    def subtask(self, name: str) -> Iterator[None]:
        self.start_subtask(name)
        try:
            yield
        finally:
            self.end_subtask(name)

    def end_run(self, success: bool = True, error_message: str = "") -> RunMetrics:
        """Завершает сбор метрик"""
        duration = time.perf_counter() - self._start_time if self._start_time is not None else 0.0
        memory_usage_mb = 0.0
        cpu_percent = 0.0
        if self.enabled:
            try:
                process = psutil.Process()
                memory_usage_mb = process.memory_info().rss / (1024 * 1024)
                cpu_percent = process.cpu_percent()
            except psutil.Error as e:
                logger.warning(f"Не удалось получить метрики процесса: {e}")

        metrics = RunMetrics(
            command=self._command or "",
            duration_sec=duration,
            subtasks=dict(self._subtasks),
            memory_usage_mb=memory_usage_mb,
            cpu_percent=cpu_percent,
            success=success,
            error_message=error_message,
        )
        logger.info(f"Команда {metrics.command} завершена за {duration:.2f} секунд")

        self._command = None
        self._start_time = None
        self._subtasks = {}
        self._open = {}
        return metrics
