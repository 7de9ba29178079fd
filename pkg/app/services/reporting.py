"""
Сводный отчет по оцененным запускам: таблица метрик, временная шкала
весов гейта, средние веса по режимам и графики SVG.
"""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from app.core.exceptions import InputError, ParseError  # noqa: E402
from app.models.detection import MetricsReport  # noqa: E402
from app.services.detection import read_gate_sidecar, gate_sidecar_header  # noqa: E402
from app.services.storage import atomic_directory, decode_line, parse_key_values  # noqa: E402

logger = logging.getLogger(__name__)

METRICS_NAME = "metrics.txt"
PR_CURVE_NAME = "pr_curve.tsv"
GATES_NAME = "gates.tsv"
TABLE_HEADER = "input\tmethod\tAP\trecall_at_eer\tEER"


@dataclass
class EvaluatedRun:
    """Результаты одного прогона оценки, прочитанные с диска"""

    directory: Path
    metrics: MetricsReport
    recalls: List[float] = field(default_factory=list)
    precisions: List[float] = field(default_factory=list)
    gates: Dict[int, List[float]] = field(default_factory=dict)
    regimes: Dict[int, str] = field(default_factory=dict)
    gate_names: List[str] = field(default_factory=list)

    @property
    def input_name(self) -> str:
        return "+".join(e for e in self.metrics.experts.split(",") if e)

    @property
    def method(self) -> str:
        return self.metrics.scheme

    @property
    def label(self) -> str:
        return f"{self.method} ({self.input_name})"


def _read_curve(path: Path):
    recalls, precisions = [], []
    offset = 0
    for number, raw in enumerate(path.read_bytes().splitlines(keepends=True)):
        line = decode_line(raw, path, offset).strip()
        if number > 0 and line:
            try:
                _, precision, recall = line.split("\t")
                precisions.append(float(precision))
                recalls.append(float(recall))
            except ValueError:
                raise ParseError(path, offset, f"bad curve row {line!r}")
        offset += len(raw)
    return recalls, precisions


def load_evaluation(directory: Union[str, Path]) -> EvaluatedRun:
    directory = Path(directory)
    metrics_path = directory / METRICS_NAME
    if not metrics_path.exists():
        raise InputError(f"no {METRICS_NAME} in {directory}")
    try:
        metrics = MetricsReport(**parse_key_values(metrics_path))
    except ValueError as e:
        raise ParseError(metrics_path, 0, f"bad metrics report: {e}")

    run = EvaluatedRun(directory=directory, metrics=metrics)
    if (directory / PR_CURVE_NAME).exists():
        run.recalls, run.precisions = _read_curve(directory / PR_CURVE_NAME)
    gates_file = directory / GATES_NAME
    if gates_file.exists():
        run.gates, run.regimes = read_gate_sidecar(gates_file)
        run.gate_names = gate_sidecar_header(gates_file) or []
    return run


def comparison_table(runs: Sequence[EvaluatedRun]) -> str:
    lines = [TABLE_HEADER]
    for run in runs:
        m = run.metrics
        lines.append(f"{run.input_name}\t{run.method}\t{m.ap:.4f}\t{m.recall_at_eer:.4f}\t{m.eer:.4f}")
    return "\n".join(lines) + "\n"


def timeline_source(runs: Sequence[EvaluatedRun]) -> Optional[EvaluatedRun]:
    """Запуск MoDE с гейтами, иначе первый запуск с гейтами"""
    gated = [r for r in runs if r.gates]
    for run in gated:
        if run.method == "mode":
            return run
    return gated[0] if gated else None


def gate_timeline(run: EvaluatedRun) -> str:
    lines = ["\t".join(["frame_index"] + run.gate_names)]
    for frame_index in sorted(run.gates):
        lines.append("\t".join([str(frame_index)] + [f"{g:.6f}" for g in run.gates[frame_index]]))
    return "\n".join(lines) + "\n"


def gate_by_regime(run: EvaluatedRun) -> Dict[str, np.ndarray]:
    """Средний вектор гейта по кадрам каждого режима"""
    grouped: Dict[str, List[List[float]]] = defaultdict(list)
    for frame_index, gate in run.gates.items():
        grouped[run.regimes.get(frame_index, "")].append(gate)
    return {regime: np.mean(values, axis=0) for regime, values in sorted(grouped.items())}


def gate_by_regime_text(run: EvaluatedRun) -> str:
    lines = ["\t".join(["regime", "frames"] + run.gate_names)]
    counts = defaultdict(int)
    for frame_index in run.gates:
        counts[run.regimes.get(frame_index, "")] += 1
    for regime, mean in gate_by_regime(run).items():
        lines.append("\t".join([regime, str(counts[regime])] + [f"{g:.6f}" for g in mean]))
    return "\n".join(lines) + "\n"


def plot_gate_timeline(run: EvaluatedRun, path: Path) -> None:
    frames = sorted(run.gates)
    values = np.array([run.gates[f] for f in frames])
    fig, ax = plt.subplots(figsize=(10, 3))
    for column, name in enumerate(run.gate_names):
        ax.plot(frames, values[:, column], label=name, linewidth=1)
    ax.set_xlabel("frame")
    ax.set_ylabel("mean gate weight")
    ax.set_ylim(0.0, 1.0)
    ax.set_title(f"Gate timeline: {run.label}")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_pr_curves(runs: Sequence[EvaluatedRun], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    for run in runs:
        if run.recalls:
            ax.plot(run.recalls, run.precisions, label=f"{run.label} AP={run.metrics.ap:.3f}", linewidth=1)
    ax.plot([0, 1], [0, 1], linestyle=":", color="grey", linewidth=0.8)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.02)
    ax.legend(loc="lower left", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def write_report(run_dirs: Sequence[Union[str, Path]], out_dir: Union[str, Path]) -> List[EvaluatedRun]:
    """
    Пишет table.tsv, pr_curves.svg и, если есть гейты, gate_timeline.tsv,
    gate_timeline.svg и gate_by_regime.tsv.

    Raises:
        InputError: ни в одном каталоге нет метрик
    """
    if not run_dirs:
        raise InputError("report needs at least one evaluated run")
    runs = [load_evaluation(d) for d in run_dirs]

    with atomic_directory(out_dir) as staging:
        (staging / "table.tsv").write_text(comparison_table(runs), encoding="utf-8")
        plot_pr_curves(runs, staging / "pr_curves.svg")
        source = timeline_source(runs)
        if source is not None:
            (staging / "gate_timeline.tsv").write_text(gate_timeline(source), encoding="utf-8")
            (staging / "gate_by_regime.tsv").write_text(gate_by_regime_text(source), encoding="utf-8")
            plot_gate_timeline(source, staging / "gate_timeline.svg")
        else:
            logger.warning("Ни один запуск не содержит весов гейта, временная шкала не построена")

    logger.info(f"Отчет по {len(runs)} запускам записан в {out_dir}")
    return runs
