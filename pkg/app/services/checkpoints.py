"""
Чекпоинты экспертов и слитых моделей.

Каталог чекпоинта: manifest.txt (key=value) + params/<имя>.mdtf.
Хэш чекпоинта - sha256 по отсортированным именам параметров и их MDTF-байтам.
"""
import hashlib
import logging
import os
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from app import __version__
from app.core.exceptions import DependencyError, ParseError
from app.nn import Params, Tensor, encode_tensor, read_tensor
from app.services.storage import parse_key_values, write_key_values
from app.services.experts import ARCHITECTURE, ExpertNet
from app.services.fusion import DenseHead, FusedModel, FusionScheme, GatingNet

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"
PARAMS_DIR = "params"
LOSS_LOG_NAME = "loss.tsv"


def _require(values: Dict[str, str], key: str, path: Path) -> str:
    if key not in values:
        raise ParseError(path, 0, f"manifest misses key '{key}'")
    return values[key]


def checkpoint_hash(directory: Union[str, Path]) -> str:
    """Хэш чекпоинта по файлам params/*.mdtf"""
    directory = Path(directory)
    params_dir = directory / PARAMS_DIR
    if not params_dir.is_dir():
        return hashlib.sha256().hexdigest()
    sha = hashlib.sha256()
    for path in sorted(params_dir.glob("*.mdtf"), key=lambda p: p.stem):
        sha.update(path.stem.encode("utf-8"))
        sha.update(path.read_bytes())
    return sha.hexdigest()


def _write_params(params: Params, directory: Path, prefix: str = "") -> None:
    params_dir = directory / PARAMS_DIR
    params_dir.mkdir(parents=True, exist_ok=True)
    for name, tensor in params.items():
        (params_dir / f"{prefix}{name}.mdtf").write_bytes(encode_tensor(tensor.data))


def _read_params(directory: Path, names: List[str], prefix: str = "", trainable: bool = False) -> Params:
    params = Params()
    for name in names:
        path = directory / PARAMS_DIR / f"{prefix}{name}.mdtf"
        if not path.exists():
            raise DependencyError(f"checkpoint {directory} misses parameter file {path.name}")
        params.add(name, Tensor(read_tensor(path), name=name), trainable=trainable)
    return params


def _shape_text(shape) -> str:
    return "x".join(str(int(v)) for v in shape)


def _parse_shape(text: str, path: Path) -> Tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split("x"))
    except ValueError:
        raise ParseError(path, 0, f"bad shape '{text}'")


def write_loss_log(path: Path, history: List[float]) -> None:
    lines = ["epoch\tmean_loss"] + [f"{i}\t{loss!r}" for i, loss in enumerate(history, start=1)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------
# Эксперты
# --------------------

def save_expert(net: ExpertNet, directory: Union[str, Path]) -> str:
    """Сохраняет эксперта; возвращает хэш чекпоинта"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_params(net.params, directory)
    digest = checkpoint_hash(directory)
    write_key_values(directory / MANIFEST_NAME, {
        "kind": "expert",
        "architecture": ARCHITECTURE,
        "layers": ",".join(net.layers),
        "modalities": ",".join(net.modalities),
        "input_size": _shape_text(net.input_size),
        "class_count": net.class_count,
        "feature_shape": _shape_text(net.feature_shape),
        "dropout": net.dropout_rate,
        "seed": net.seed,
        "params": ",".join(net.params),
        "hash": digest,
        "version": __version__,
    })
    if net.loss_history:
        write_loss_log(directory / LOSS_LOG_NAME, net.loss_history)
    logger.info(f"Эксперт {net.modality} сохранен в {directory}")
    return digest


def read_manifest(directory: Union[str, Path]) -> Dict[str, str]:
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    if not path.exists():
        raise DependencyError(f"no checkpoint manifest in {directory}")
    return parse_key_values(path)


def load_expert(directory: Union[str, Path], trainable: bool = False) -> ExpertNet:
    """Загружает эксперта; по умолчанию параметры заморожены"""
    directory = Path(directory)
    manifest = read_manifest(directory)
    path = directory / MANIFEST_NAME
    if _require(manifest, "kind", path) != "expert":
        raise DependencyError(f"{directory} is not an expert checkpoint")
    if manifest.get("architecture") != ARCHITECTURE:
        raise DependencyError(f"unsupported architecture '{manifest.get('architecture')}' in {directory}")

    names = _require(manifest, "params", path).split(",")
    params = _read_params(directory, names, trainable=trainable)
    net = ExpertNet(
        modalities=tuple(_require(manifest, "modalities", path).split(",")),
        input_size=_parse_shape(_require(manifest, "input_size", path), path),
        class_count=int(_require(manifest, "class_count", path)),
        params=params,
        seed=int(manifest.get("seed", 0)),
        dropout_rate=float(manifest.get("dropout", 0.5)),
    )
    declared = manifest.get("feature_shape")
    if declared and _parse_shape(declared, path) != net.feature_shape:
        raise ParseError(path, 0, f"feature_shape {declared} disagrees with architecture")
    return net


# --------------------
# Слитые модели
# --------------------

def _save_head(head: DenseHead, directory: Path, prefix: str) -> Dict[str, object]:
    _write_params(head.params, directory, prefix=prefix)
    return {
        f"{prefix}input_dim": head.input_dim,
        f"{prefix}output_dim": head.output_dim,
        f"{prefix}hidden": head.hidden,
        f"{prefix}dropout": head.dropout_rate,
        f"{prefix}params": ",".join(head.params),
    }


def _load_head(cls, manifest: Dict[str, str], directory: Path, prefix: str):
    path = directory / MANIFEST_NAME
    names = _require(manifest, f"{prefix}params", path).split(",")
    return cls(
        input_dim=int(_require(manifest, f"{prefix}input_dim", path)),
        output_dim=int(_require(manifest, f"{prefix}output_dim", path)),
        params=_read_params(directory, names, prefix=prefix),
        hidden=int(manifest.get(f"{prefix}hidden", 64)),
        dropout_rate=float(manifest.get(f"{prefix}dropout", 0.5)),
    )


def save_fused(
    model: FusedModel,
    directory: Union[str, Path],
    expert_dirs: List[Path],
    final_directory: Optional[Path] = None,
) -> str:
    """
    Сохраняет слитую модель. Эксперты не копируются: манифест ссылается на их
    каталоги относительным путем и фиксирует их хэши.

    Args:
        expert_dirs: каталоги чекпоинтов экспертов в порядке model.experts
        final_directory: итоговое расположение, если запись идет во временный каталог
    """
    directory = Path(directory)
    anchor = Path(final_directory or directory).resolve()
    directory.mkdir(parents=True, exist_ok=True)
    if len(expert_dirs) != len(model.experts):
        raise DependencyError("one checkpoint directory per expert is required")

    values: Dict[str, object] = {
        "kind": "fused",
        "scheme": model.scheme.value,
        "expert_count": len(model.experts),
    }
    for index, (expert, expert_dir) in enumerate(zip(model.experts, expert_dirs)):
        values[f"expert.{index}.path"] = os.path.relpath(Path(expert_dir).resolve(), anchor)
        values[f"expert.{index}.modality"] = expert.modality
        values[f"expert.{index}.hash"] = checkpoint_hash(expert_dir)
    if model.gate is not None:
        values.update(_save_head(model.gate, directory, "gate."))
    if model.head is not None:
        values.update(_save_head(model.head, directory, "late."))
    if model.channel_net is not None:
        channel_dir = directory / "channel"
        save_expert(model.channel_net, channel_dir)
        values["channel.path"] = "channel"
        values["channel_order"] = ",".join(model.channel_order)
    values["version"] = __version__

    write_key_values(directory / MANIFEST_NAME, values)
    digest = checkpoint_hash(directory)
    logger.info(f"Модель слияния '{model.scheme.value}' сохранена в {directory}")
    return digest


def load_fused(directory: Union[str, Path]) -> FusedModel:
    """
    Загружает слитую модель вместе с экспертами.

    Raises:
        DependencyError: нет чекпоинта эксперта или его хэш не совпадает с записанным
    """
    directory = Path(directory)
    manifest = read_manifest(directory)
    path = directory / MANIFEST_NAME
    if _require(manifest, "kind", path) != "fused":
        raise DependencyError(f"{directory} is not a fused-model checkpoint")

    experts = []
    for index in range(int(_require(manifest, "expert_count", path))):
        expert_dir = (directory / _require(manifest, f"expert.{index}.path", path)).resolve()
        if not (expert_dir / MANIFEST_NAME).exists():
            raise DependencyError(f"expert checkpoint {expert_dir} referenced by {directory} is missing")
        recorded = manifest.get(f"expert.{index}.hash")
        actual = checkpoint_hash(expert_dir)
        if recorded and recorded != actual:
            raise DependencyError(
                f"expert checkpoint {expert_dir} changed since {directory} was trained "
                f"(hash {actual[:12]} != {recorded[:12]})"
            )
        experts.append(load_expert(expert_dir))

    gate = _load_head(GatingNet, manifest, directory, "gate.") if "gate.params" in manifest else None
    head = _load_head(DenseHead, manifest, directory, "late.") if "late.params" in manifest else None
    channel_net = None
    channel_order: Tuple[str, ...] = ()
    if "channel.path" in manifest:
        channel_net = load_expert(directory / manifest["channel.path"])
        channel_order = tuple(_require(manifest, "channel_order", path).split(","))

    return FusedModel(
        experts=experts,
        scheme=FusionScheme(_require(manifest, "scheme", path)),
        gate=gate,
        head=head,
        channel_net=channel_net,
        channel_order=channel_order,
    )


def load_model(directory: Union[str, Path]) -> FusedModel:
    """Загружает любой чекпоинт; эксперт оборачивается в схему single"""
    manifest = read_manifest(directory)
    if manifest.get("kind") == "expert":
        expert = load_expert(directory)
        return FusedModel(experts=[expert], scheme=FusionScheme.SINGLE)
    return load_fused(directory)
