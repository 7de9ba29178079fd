from pathlib import Path
from typing import Optional

import click

from app.cli.commands.options import pipeline_options
from app.services.pipeline import TRAIN_STAGES, ExperimentPipeline


@click.command("train")
@click.option("--stage", required=True, type=click.Choice(TRAIN_STAGES), help="Стадия обучения")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--experts", "experts_dir", default=None, type=click.Path(file_okay=False, path_type=Path),
              help="Каталог чекпоинтов экспертов (для gate и late)")
@pipeline_options
def train(pipeline: ExperimentPipeline, stage: str, data_dir: Path, out_dir: Path, experts_dir: Optional[Path]):
    """Обучает экспертов, гейт или базовую схему слияния"""
    manifest = pipeline.train(stage, data_dir, out_dir, experts_dir)
    click.echo(f"checkpoints={out_dir} stage={stage} duration_sec={manifest.duration_sec:.2f}")
