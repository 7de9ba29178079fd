"""
Чтение и запись датасета.

Каталог: frames/NNNNNN.{rgb,depth,motion}.mdtf, annotations.tsv, regimes.tsv, meta.txt.
"""
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Tuple, Union

from app.core.exceptions import InputError, ParseError
from app.core.validators import DatasetValidator
from app.models.dataset import Annotation, MultimodalFrame
from app.models.geometry import BoundingBox
from app.models.training import Split
from app.nn import read_tensor, write_tensor
from app.services.storage import decode_line, parse_key_values, write_key_values

logger = logging.getLogger(__name__)

FRAMES_DIR = "frames"
ANNOTATIONS_NAME = "annotations.tsv"
REGIMES_NAME = "regimes.tsv"
META_NAME = "meta.txt"
ANNOTATION_HEADER = "frame_index\ttrack_id\tx_min\ty_min\tx_max\ty_max\toccluded"
REGIME_HEADER = "frame_index\tregime"
MODALITY_FILES = ("rgb", "depth", "motion")

SPLIT_FRACTIONS = (0.6, 0.2, 0.2)


def frame_path(directory: Path, frame_index: int, modality: str) -> Path:
    return directory / FRAMES_DIR / f"{frame_index:06d}.{modality}.mdtf"


def write_dataset(
    frames: List[MultimodalFrame],
    directory: Union[str, Path],
    meta: Optional[Dict[str, object]] = None,
) -> None:
    """Записывает кадры в каталог; значения float сохраняются без потерь"""
    directory = Path(directory)
    (directory / FRAMES_DIR).mkdir(parents=True, exist_ok=True)

    annotation_lines = [ANNOTATION_HEADER]
    regime_lines = [REGIME_HEADER]
    for frame in frames:
        for modality in MODALITY_FILES:
            write_tensor(frame_path(directory, frame.frame_index, modality), frame.modality(modality))
        for a in frame.annotations:
            box = a.box
            annotation_lines.append(
                f"{frame.frame_index}\t{a.track_id}\t{box.x_min!r}\t{box.y_min!r}\t"
                f"{box.x_max!r}\t{box.y_max!r}\t{int(a.occluded)}"
            )
        regime_lines.append(f"{frame.frame_index}\t{frame.regime}")

    (directory / ANNOTATIONS_NAME).write_text("\n".join(annotation_lines) + "\n", encoding="utf-8")
    (directory / REGIMES_NAME).write_text("\n".join(regime_lines) + "\n", encoding="utf-8")

    values: Dict[str, object] = {"frames": len(frames)}
    if frames:
        height, width = frames[0].size
        values["size"] = f"{height}x{width}"
    values.update(meta or {})
    write_key_values(directory / META_NAME, values)
    logger.info(f"Датасет записан: {len(frames)} кадров в {directory}")


def _read_tsv(path: Path, header: str, columns: int) -> Iterable[Tuple[int, List[str]]]:
    """Строки TSV со смещением в байтах; заголовок проверяется"""
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise ParseError(path, 0, f"cannot read file: {e}")
    offset = 0
    for number, raw in enumerate(payload.splitlines(keepends=True)):
        line = decode_line(raw, path, offset).rstrip("\r\n")
        if number == 0:
            if line != header:
                raise ParseError(path, 0, f"unexpected header {line!r}")
        elif line:
            fields = line.split("\t")
            if len(fields) != columns:
                raise ParseError(path, offset, f"expected {columns} columns, got {len(fields)}")
            yield offset, fields
        offset += len(raw)


def read_meta(directory: Union[str, Path]) -> Dict[str, str]:
    directory = Path(directory)
    path = directory / META_NAME
    if not path.exists():
        raise InputError(f"{directory} is not a dataset directory (no {META_NAME})")
    return parse_key_values(path)


def dataset_size(meta: Dict[str, str], path: Path) -> Tuple[int, int]:
    try:
        height, width = (int(v) for v in meta["size"].split("x"))
    except (KeyError, ValueError):
        raise ParseError(path, 0, f"bad or missing size in meta: {meta.get('size')!r}")
    return height, width


def read_annotations(directory: Union[str, Path]) -> Dict[int, List[Annotation]]:
    path = Path(directory) / ANNOTATIONS_NAME
    by_frame: Dict[int, List[Annotation]] = defaultdict(list)
    for offset, fields in _read_tsv(path, ANNOTATION_HEADER, 7):
        try:
            frame_index, track_id = int(fields[0]), int(fields[1])
            coords = [float(v) for v in fields[2:6]]
            occluded = {"0": False, "1": True}[fields[6]]
        except (ValueError, KeyError):
            raise ParseError(path, offset, f"bad annotation row {fields}")
        try:
            box = BoundingBox(x_min=coords[0], y_min=coords[1], x_max=coords[2], y_max=coords[3])
        except ValueError as e:
            raise ParseError(path, offset, f"invalid box: {e}")
        by_frame[frame_index].append(Annotation(box=box, occluded=occluded, track_id=track_id))
    return dict(by_frame)


def read_regimes(directory: Union[str, Path]) -> Dict[int, str]:
    path = Path(directory) / REGIMES_NAME
    regimes: Dict[int, str] = {}
    for offset, fields in _read_tsv(path, REGIME_HEADER, 2):
        try:
            regimes[int(fields[0])] = fields[1]
        except ValueError:
            raise ParseError(path, offset, f"bad regime row {fields}")
    return regimes


def frame_count(directory: Union[str, Path]) -> int:
    return len(read_regimes(directory))


def iter_dataset(
    directory: Union[str, Path],
    indices: Optional[Iterable[int]] = None,
) -> Iterator[MultimodalFrame]:
    """
    Читает кадры по одному (или подмножество кадров по номерам).

    Raises:
        ParseError: битый файл (с именем и смещением)
        DatasetValidationError: рамка вне изображения
    """
    directory = Path(directory)
    meta = read_meta(directory)
    regimes = read_regimes(directory)
    annotations = read_annotations(directory)
    size = dataset_size(meta, directory / META_NAME)

    for frame_index in annotations:
        if frame_index not in regimes:
            raise InputError(f"annotations reference frame {frame_index} absent from {directory}")
    wanted = sorted(regimes) if indices is None else list(indices)
    for frame_index in wanted:
        if frame_index not in regimes:
            raise InputError(f"frame {frame_index} is absent from dataset {directory}")

    for frame_index in wanted:
        images = {m: read_tensor(frame_path(directory, frame_index, m)) for m in MODALITY_FILES}
        frame = MultimodalFrame(
            annotations=annotations.get(frame_index, []),
            regime=regimes[frame_index],
            frame_index=frame_index,
            **images,
        )
        DatasetValidator.validate_frame(frame, size)
        yield frame


def read_dataset(
    directory: Union[str, Path],
    indices: Optional[Iterable[int]] = None,
) -> List[MultimodalFrame]:
    frames = list(iter_dataset(directory, indices))
    logger.info(f"Прочитано {len(frames)} кадров из {directory}")
    return frames


def split_indices(count: int) -> Dict[Split, List[int]]:
    """Разбиение 60/20/20 по позиции в последовательности"""
    n_train = int(count * SPLIT_FRACTIONS[0])
    n_gate = int(count * SPLIT_FRACTIONS[1])
    splits = {
        Split.TRAIN: list(range(0, n_train)),
        Split.GATE_VAL: list(range(n_train, n_train + n_gate)),
        Split.TEST: list(range(n_train + n_gate, count)),
        Split.ALL: list(range(count)),
    }
    DatasetValidator.validate_disjoint(splits[Split.TRAIN], splits[Split.GATE_VAL], splits[Split.TEST])
    return splits


def split_frame_indices(directory: Union[str, Path], split: Union[Split, str]) -> List[int]:
    ordered = sorted(read_regimes(directory))
    positions = split_indices(len(ordered))[Split(split)]
    return [ordered[p] for p in positions]
