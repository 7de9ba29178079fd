from functools import wraps
from pathlib import Path

import click

from app.cli.deps import get_pipeline


def pipeline_options(command):
    """Общие опции конфигурации; команда получает готовый ExperimentPipeline"""

    @click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
                  default=None, help="Файл конфигурации section.key=value")
    @click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                  help="Переопределение ключа конфигурации")
    @click.option("--seed", type=int, default=None, help="Переопределяет data.seed и train.seed")
    @click.option("--threads", type=click.IntRange(1, 64), default=None, help="Максимум рабочих потоков")
    @click.option("--progress/--no-progress", default=False, help="Показывать прогресс обучения")
    @wraps(command)
    def wrapper(config_path, overrides, seed, threads, progress, **kwargs):
        pipeline = get_pipeline(config_path, tuple(overrides), seed, threads, progress)
        return command(pipeline, **kwargs)

    return wrapper
