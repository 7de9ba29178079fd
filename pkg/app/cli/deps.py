import logging
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple

from app.core.config import RunConfig, load_run_config, settings
from app.services.pipeline import ExperimentPipeline

logger = logging.getLogger(__name__)


@lru_cache(maxsize=8)
def get_run_config(
    config_path: Optional[Path] = None,
    overrides: Tuple[str, ...] = (),
    seed: Optional[int] = None,
) -> RunConfig:
    """Загружает и кэширует конфигурацию запуска"""
    config = load_run_config(config_path, overrides, seed)
    logger.debug(f"Конфигурация загружена: {config_path or 'по умолчанию'}, переопределений {len(overrides)}")
    return config


@lru_cache(maxsize=8)
def get_pipeline(
    config_path: Optional[Path] = None,
    overrides: Tuple[str, ...] = (),
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    progress: bool = False,
) -> ExperimentPipeline:
    """Создает пайплайн эксперимента"""
    config = get_run_config(config_path, overrides, seed)
    return ExperimentPipeline(
        config=config,
        threads=threads or settings.max_threads,
        enable_metrics=settings.metrics_enabled,
        progress=progress,
    )
