from pathlib import Path

import click

from app.cli.commands.options import pipeline_options
from app.services.pipeline import ExperimentPipeline


@click.command("gen-data")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False, path_type=Path),
              help="Каталог датасета")
@pipeline_options
def gen_data(pipeline: ExperimentPipeline, out_dir: Path):
    """Генерирует синтетическую RGB-D последовательность с разметкой"""
    manifest = pipeline.generate_data(out_dir)
    click.echo(f"dataset={out_dir} frames={pipeline.config.data.frames} duration_sec={manifest.duration_sec:.2f}")
