from app.cli.commands.data import gen_data
from app.cli.commands.detect import detect
from app.cli.commands.evaluate import evaluate
from app.cli.commands.report import report
from app.cli.commands.train import train

__all__ = ["gen_data", "train", "detect", "evaluate", "report"]
