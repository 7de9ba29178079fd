"""
Логирование CLI: цветная консоль в stderr и JSON-файл с run_id.
"""
import json
import logging
import sys
import uuid
from contextvars import ContextVar
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

import coloredlogs

# Идентификатор текущего запуска CLI
run_id_var: ContextVar[str] = ContextVar("run_id", default="")
# рабочие потоки не наследуют контекст, поэтому храним и глобально
_process_run_id = ""


def new_run_id() -> str:
    """Создает и запоминает новый Run ID"""
    global _process_run_id
    run_id = uuid.uuid4().hex[:12]
    run_id_var.set(run_id)
    _process_run_id = run_id
    return run_id


def get_run_id() -> str:
    """Получить текущий Run ID"""
    return run_id_var.get() or _process_run_id


class RunIdFilter(logging.Filter):
    """Добавляет run_id к каждой записи лога"""

    def filter(self, record: logging.LogRecord) -> bool:
        record.run_id = get_run_id()
        return True


class JSONFormatter(logging.Formatter):
    """
    Пользовательский форматер для JSON логов.
    Преобразует логи в JSON для машинной обработки.
    """
    def format(self, record):
        log_obj = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "name": record.name,
            "level": record.levelname,
            "message": record.getMessage(),
        }

        if getattr(record, "run_id", ""):
            log_obj["run_id"] = record.run_id

        if record.exc_info:
            log_obj["exception"] = self.formatException(record.exc_info)

        return json.dumps(log_obj, ensure_ascii=False)


def setup_logging(
    log_level: str = "INFO",
    log_file: Optional[str] = None,
    max_file_size: int = 10 * 1024 * 1024,  # 10 MB
    backup_count: int = 5,
    json_logs: bool = True,
):
    """
    Настраивает логирование для приложения.

    Args:
        log_level: Уровень логирования (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: Путь к файлу для записи логов (опционально)
        max_file_size: Максимальный размер файла лога
        backup_count: Количество резервных копий
        json_logs: Использовать JSON форматирование для файла логов
    """
    numeric_level = getattr(logging, log_level.upper(), logging.INFO)

    console_formatter = coloredlogs.ColoredFormatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%H:%M:%S',
        field_styles={
            'asctime': {'color': 'green'},
            'name': {'color': 'blue'},
            'levelname': {'color': 'magenta', 'bold': True},
        }
    )

    root_logger = logging.getLogger()
    root_logger.setLevel(numeric_level)
    root_logger.handlers.clear()

    run_filter = RunIdFilter()

    # Консоль пишем в stderr, чтобы stdout оставался для результатов команд
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(console_formatter)
    console_handler.setLevel(numeric_level)
    console_handler.addFilter(run_filter)
    root_logger.addHandler(console_handler)

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)

        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=max_file_size,
            backupCount=backup_count,
            encoding='utf-8'
        )

        if json_logs:
            file_handler.setFormatter(JSONFormatter())
        else:
            file_handler.setFormatter(logging.Formatter(
                '%(asctime)s - %(run_id)s - %(name)s - %(levelname)s - %(message)s',
                datefmt='%Y-%m-%d %H:%M:%S'
            ))

        file_handler.setLevel(numeric_level)
        file_handler.addFilter(run_filter)
        root_logger.addHandler(file_handler)

    # matplotlib слишком многословен на DEBUG
    for noisy in ("matplotlib", "PIL"):
        logging.getLogger(noisy).setLevel(logging.WARNING)

    if log_file:
        root_logger.debug(f"Логи пишутся в {log_file}, ротация после {max_file_size // (1024 * 1024)} МБ")
