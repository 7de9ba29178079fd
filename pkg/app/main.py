import logging
from typing import Optional

import click

from app import __version__
from app.cli.commands import detect, evaluate, gen_data, report, train
from app.core.config import settings
from app.core.exceptions import FusionLabError
from app.core.logging_config import new_run_id, setup_logging

logger = logging.getLogger(__name__)


class FusionLabGroup(click.Group):
    """Группа команд, переводящая исключения в коды завершения"""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except (click.exceptions.Exit, click.exceptions.Abort, click.ClickException):
            raise
        except FusionLabError as exc:
            logger.error(f"{exc.__class__.__name__}: {exc.detail}")
            click.echo(f"error: {exc.detail}", err=True)
            ctx.exit(exc.exit_code)
        except Exception as exc:
            logger.error(f"Unhandled exception: {exc}", exc_info=True)
            click.echo(f"error: {exc.__class__.__name__}: {exc}", err=True)
            ctx.exit(1)


@click.group(cls=FusionLabGroup)
@click.version_option(__version__, prog_name="sensor-fusion")
@click.option("--log-level", default=None, help="Уровень логирования (по умолчанию LOG_LEVEL)")
@click.option("--log-file", default=None, help="Файл логов (по умолчанию LOG_FILE, пустая строка - без файла)")
def cli(log_level: Optional[str], log_file: Optional[str]):
    """Sensor Fusion Lab: смесь сверточных экспертов для RGB-D детекции людей"""
    log_file = settings.log_file if log_file is None else log_file
    setup_logging(
        log_level=log_level or settings.log_level,
        log_file=log_file or None,
        max_file_size=settings.log_max_size_mb * 1024 * 1024,
        backup_count=settings.log_backup_count,
        json_logs=settings.json_logs,
    )
    run_id = new_run_id()
    logger.debug(f"Run ID: {run_id}")


cli.add_command(gen_data)
cli.add_command(train)
cli.add_command(detect)
cli.add_command(evaluate)
cli.add_command(report)


def main() -> None:
    cli(prog_name="sensor-fusion")


if __name__ == "__main__":
    main()
