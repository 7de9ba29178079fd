from pathlib import Path
from typing import Optional

import click

from app.cli.commands.options import pipeline_options
from app.models.training import Split
from app.services.pipeline import OVERRIDE_SCHEMES, ExperimentPipeline


@click.command("detect")
@click.option("--model", "model_dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", "out_file", required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option("--split", type=click.Choice([s.value for s in Split]), default=Split.TEST.value, show_default=True)
@click.option("--scheme", type=click.Choice([s.value for s in OVERRIDE_SCHEMES]), default=None,
              help="Другая схема поверх того же гейта")
@pipeline_options
def detect(pipeline: ExperimentPipeline, model_dir: Path, data_dir: Path, out_file: Path,
           split: str, scheme: Optional[str]):
    """Скользящее окно, оценка окон моделью и NMS"""
    pipeline.detect(model_dir, data_dir, out_file, split=split, scheme=scheme)
    click.echo(f"detections={out_file}")
