from pathlib import Path
from typing import Optional

import click

from app.cli.commands.options import pipeline_options
from app.models.training import Split
from app.services.pipeline import ExperimentPipeline
from app.services.reporting import METRICS_NAME


@click.command("evaluate")
@click.option("--detections", "detections_file", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path))
@click.option("--iou", "iou_threshold", type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True),
              default=None, help="Порог IoU (по умолчанию eval.iou)")
@click.option("--extra-iou", type=click.FloatRange(0.0, 1.0, min_open=True, max_open=True), default=None,
              help="Дополнительный порог IoU для второго отчета")
@click.option("--split", type=click.Choice([s.value for s in Split]), default=Split.TEST.value, show_default=True)
@pipeline_options
def evaluate(pipeline: ExperimentPipeline, detections_file: Path, data_dir: Path, out_dir: Path,
             iou_threshold: Optional[float], extra_iou: Optional[float], split: str):
    """Считает AP, EER и кривую точность-полнота"""
    pipeline.evaluate(detections_file, data_dir, out_dir, iou_threshold, split=split, extra_iou=extra_iou)
    click.echo((out_dir / METRICS_NAME).read_text(encoding="utf-8"), nl=False)
