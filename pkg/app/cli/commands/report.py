from pathlib import Path
from typing import Tuple

import click

from app.cli.commands.options import pipeline_options
from app.services.pipeline import ExperimentPipeline


@click.command("report")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@pipeline_options
def report(pipeline: ExperimentPipeline, run_dirs: Tuple[Path, ...], out_dir: Path):
    """Сводная таблица и временная шкала гейта по оцененным запускам"""
    pipeline.report(list(run_dirs), out_dir)
    click.echo((out_dir / "table.tsv").read_text(encoding="utf-8"), nl=False)
