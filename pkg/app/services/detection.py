"""
Детекция скользящим окном: предложения на нескольких масштабах,
оценка окон слитой моделью и подавление немаксимумов.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.exceptions import InputError, ParameterError, ParseError
from app.models.dataset import MultimodalFrame
from app.models.detection import Detection
from app.models.geometry import BoundingBox
from app.models.training import HUMAN
from app.services.evaluation import iou
from app.services.experts import prepare_windows
from app.services.fusion import FusedModel, fused_forward
from app.services.storage import atomic_file, decode_line

logger = logging.getLogger(__name__)

SCORE_BATCH = 256
DETECTION_COLUMNS = ("frame_index", "x_min", "y_min", "x_max", "y_max", "score")


@dataclass
class DetectionRun:
    """Детекции по кадрам и средние веса гейта по всем оцененным окнам кадра"""

    scheme: str
    experts: List[str]
    detections: Dict[int, List[Detection]] = field(default_factory=dict)
    mean_gates: Dict[int, List[float]] = field(default_factory=dict)
    regimes: Dict[int, str] = field(default_factory=dict)

    @property
    def has_gate(self) -> bool:
        return bool(self.mean_gates)


def generate_proposals(
    frame_size: Tuple[int, int],
    scales: Sequence[int],
    aspect: float,
    stride_fraction: float,
) -> List[BoundingBox]:
    """
    Окна высоты s и ширины s·aspect с шагом max(1, round(stride_fraction·s)).
    Порядок: масштаб, строка, столбец. Не помещающиеся масштабы пропускаются.
    """
    if not scales:
        raise ParameterError("at least one proposal scale is required")
    if aspect <= 0 or stride_fraction <= 0:
        raise ParameterError(f"aspect and stride fraction must be positive, got {aspect}, {stride_fraction}")
    height, width = frame_size
    proposals = []
    skipped = 0
    for s in scales:
        w = max(1, round(s * aspect))
        if s < 1 or s > height or w > width:
            skipped += 1
            continue
        stride = max(1, round(stride_fraction * s))
        for y in range(0, height - s + 1, stride):
            for x in range(0, width - w + 1, stride):
                proposals.append(BoundingBox(x_min=x, y_min=y, x_max=x + w, y_max=y + s))
    if skipped:
        logger.warning(f"Пропущено масштабов больше кадра {width}x{height}: {skipped}")
    return proposals


def score_windows(
    model: FusedModel,
    frame: MultimodalFrame,
    proposals: Sequence[BoundingBox],
    window: int = 32,
    depth_range: Tuple[float, float] = (0.5, 10.0),
) -> List[Detection]:
    """Оценка окон без dropout; score = F[human], гейт записывается для mode/switch"""
    for name in model.modalities:
        if frame.modality(name) is None:
            raise InputError(f"frame {frame.frame_index} lacks modality '{name}' required by the model")

    detections = []
    for start in range(0, len(proposals), SCORE_BATCH):
        boxes = list(proposals[start:start + SCORE_BATCH])
        windows = prepare_windows(frame, model.modalities, boxes, window, depth_range)
        fused, gate = fused_forward(model, windows, training=False)
        scores = np.clip(fused.data[:, HUMAN], 0.0, 1.0)
        for i, box in enumerate(boxes):
            detections.append(Detection(
                box=box,
                score=float(scores[i]),
                gate=gate.data[i].tolist() if gate is not None else None,
                frame_index=frame.frame_index,
            ))
    return detections


def nms(detections: Sequence[Detection], iou_threshold: float) -> List[Detection]:
    """Жадное подавление: по убыванию score, окно остается при IoU < порога со всеми оставленными"""
    if not 0.0 < iou_threshold < 1.0:
        raise ParameterError(f"nms iou threshold must lie in (0, 1), got {iou_threshold}")
    ordered = sorted(detections, key=lambda d: -d.score)
    kept: List[Detection] = []
    for candidate in ordered:
        if all(iou(candidate.box, k.box) < iou_threshold for k in kept):
            kept.append(candidate)
    return kept


def detect_frames(
    model: FusedModel,
    frames: Sequence[MultimodalFrame],
    scales: Sequence[int],
    aspect: float,
    stride_fraction: float,
    nms_iou: float,
    window: int = 32,
    depth_range: Tuple[float, float] = (0.5, 10.0),
    threads: int = 1,
) -> DetectionRun:
    """Предложения -> оценка -> NMS для каждого кадра (кадры параллельно)"""
    run = DetectionRun(scheme=model.scheme.value, experts=model.expert_names)

    def job(frame: MultimodalFrame):
        proposals = generate_proposals(frame.size, scales, aspect, stride_fraction)
        scored = score_windows(model, frame, proposals, window, depth_range)
        mean_gate = None
        if model.provides_gate and scored:
            mean_gate = np.mean([d.gate for d in scored], axis=0).tolist()
        return frame, nms(scored, nms_iou), mean_gate

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for frame, kept, mean_gate in pool.map(job, frames):
            run.detections[frame.frame_index] = kept
            run.regimes[frame.frame_index] = frame.regime
            if mean_gate is not None:
                run.mean_gates[frame.frame_index] = mean_gate

    total = sum(len(v) for v in run.detections.values())
    logger.info(f"Детекция '{run.scheme}': {len(frames)} кадров, {total} детекций после NMS")
    return run


# --------------------
# Файлы детекций
# --------------------

def gates_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".gates.tsv")


def _header(scheme: str, experts: Sequence[str]) -> str:
    return f"# scheme={scheme} experts={','.join(experts)}"


def write_detections(path: Union[str, Path], run: DetectionRun) -> None:
    """
    Файл: строка '# scheme=... experts=...', заголовок колонок, затем строки
    frame_index, x_min, y_min, x_max, y_max, score и колонки гейта (если есть).
    """
    path = Path(path)
    has_gate = any(d.gate is not None for ds in run.detections.values() for d in ds)
    columns = list(DETECTION_COLUMNS) + ([f"g_{name}" for name in run.experts] if has_gate else [])
    lines = [_header(run.scheme, run.experts), "\t".join(columns)]
    for frame_index in sorted(run.detections):
        for d in run.detections[frame_index]:
            b = d.box
            row = [str(frame_index), repr(b.x_min), repr(b.y_min), repr(b.x_max), repr(b.y_max), repr(d.score)]
            if has_gate:
                row += [repr(g) for g in d.gate]
            lines.append("\t".join(row))
    with atomic_file(path) as staging:
        staging.write_text("\n".join(lines) + "\n", encoding="utf-8")

    if run.has_gate:
        gate_lines = ["\t".join(["frame_index", "regime"] + [f"g_{name}" for name in run.experts])]
        for frame_index in sorted(run.mean_gates):
            values = [repr(g) for g in run.mean_gates[frame_index]]
            gate_lines.append("\t".join([str(frame_index), run.regimes.get(frame_index, "")] + values))
        with atomic_file(gates_path(path)) as staging:
            staging.write_text("\n".join(gate_lines) + "\n", encoding="utf-8")


def _parse_header(line: str, path: Path) -> Tuple[str, List[str]]:
    if not line.startswith("#"):
        raise ParseError(path, 0, "missing '# scheme=... experts=...' header")
    values = {}
    for item in line[1:].split():
        key, sep, value = item.partition("=")
        if sep:
            values[key] = value
    if "scheme" not in values:
        raise ParseError(path, 0, "header does not name the scheme")
    experts = [e for e in values.get("experts", "").split(",") if e]
    return values["scheme"], experts


def read_detections(path: Union[str, Path]) -> DetectionRun:
    """Читает файл детекций (и сайдкар гейтов, если он есть)"""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise InputError(f"cannot read detections file {path}: {e}")

    if not payload:
        logger.warning(f"Файл детекций {path} пуст, считаем прогон без детекций")
        return DetectionRun(scheme="", experts=[])
    raw_lines = payload.splitlines(keepends=True)
    if len(raw_lines) < 2:
        raise ParseError(path, 0, "detections file needs a header and a column line")
    scheme, experts = _parse_header(decode_line(raw_lines[0], path, 0).strip(), path)
    offset = len(raw_lines[0])
    columns = decode_line(raw_lines[1], path, offset).rstrip("\r\n").split("\t")
    if tuple(columns[:len(DETECTION_COLUMNS)]) != DETECTION_COLUMNS:
        raise ParseError(path, offset, f"unexpected columns {columns}")
    gate_width = len(columns) - len(DETECTION_COLUMNS)
    offset += len(raw_lines[1])

    run = DetectionRun(scheme=scheme, experts=experts)
    for raw in raw_lines[2:]:
        line = decode_line(raw, path, offset).rstrip("\r\n")
        if line:
            fields = line.split("\t")
            if len(fields) != len(columns):
                raise ParseError(path, offset, f"expected {len(columns)} columns, got {len(fields)}")
            try:
                frame_index = int(fields[0])
                x_min, y_min, x_max, y_max, score = (float(v) for v in fields[1:6])
                gate = [float(v) for v in fields[6:]] if gate_width else None
                detection = Detection(
                    box=BoundingBox(x_min=x_min, y_min=y_min, x_max=x_max, y_max=y_max),
                    score=score,
                    gate=gate,
                    frame_index=frame_index,
                )
            except ValueError as e:
                raise ParseError(path, offset, f"bad detection row: {e}")
            run.detections.setdefault(frame_index, []).append(detection)
        offset += len(raw)

    sidecar = gates_path(path)
    if sidecar.exists():
        run.mean_gates, run.regimes = read_gate_sidecar(sidecar)
    return run


def read_gate_sidecar(path: Union[str, Path]) -> Tuple[Dict[int, List[float]], Dict[int, str]]:
    path = Path(path)
    gates: Dict[int, List[float]] = {}
    regimes: Dict[int, str] = {}
    offset = 0
    for number, raw in enumerate(path.read_bytes().splitlines(keepends=True)):
        line = decode_line(raw, path, offset).rstrip("\r\n")
        if number > 0 and line:
            fields = line.split("\t")
            try:
                frame_index = int(fields[0])
                gates[frame_index] = [float(v) for v in fields[2:]]
            except (ValueError, IndexError):
                raise ParseError(path, offset, f"bad gate row {fields}")
            regimes[frame_index] = fields[1]
        offset += len(raw)
    return gates, regimes


def gate_sidecar_header(path: Union[str, Path]) -> Optional[List[str]]:
    """Имена колонок гейтов из сайдкара (g_rgb, g_depth, ...)"""
    path = Path(path)
    if not path.exists():
        return None
    first = path.read_bytes().splitlines()[:1]
    return decode_line(first[0], path, 0).split("\t")[2:] if first else None
