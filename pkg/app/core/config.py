import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings

from app.core.exceptions import ConfigurationError


class Settings(BaseSettings):
    """Настройки окружения (переменные окружения и .env)."""

    # Настройки логирования
    log_level: str = Field(default="INFO", alias="LOG_LEVEL")
    log_file: Optional[str] = Field(default="logs/fusion.log", alias="LOG_FILE")
    log_max_size_mb: int = Field(default=10, alias="LOG_MAX_SIZE_MB")
    log_backup_count: int = Field(default=5, alias="LOG_BACKUP_COUNT")
    json_logs: bool = Field(default=True, alias="JSON_LOGS")

    # Настройки производительности
    max_threads: int = Field(
        default_factory=lambda: min(4, os.cpu_count() or 1), alias="MAX_THREADS"
    )
    metrics_enabled: bool = Field(default=True, alias="METRICS_ENABLED")

    model_config = {
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "case_sensitive": False,
        "populate_by_name": True,
    }

    @field_validator("log_max_size_mb")
    def validate_log_max_size(cls, v):
        if v <= 0:
            raise ValueError("LOG_MAX_SIZE_MB must be positive")
        if v > 100:  # 100 MB max
            raise ValueError("LOG_MAX_SIZE_MB cannot exceed 100")
        return v

    @field_validator("log_backup_count")
    def validate_log_backup_count(cls, v):
        if v < 0:
            raise ValueError("LOG_BACKUP_COUNT cannot be negative")
        if v > 20:
            raise ValueError("LOG_BACKUP_COUNT cannot exceed 20")
        return v

    @field_validator("max_threads")
    def validate_max_threads(cls, v):
        if v <= 0:
            raise ValueError("MAX_THREADS must be positive")
        if v > 64:
            raise ValueError("MAX_THREADS cannot exceed 64")
        return v


settings = Settings()


# --------------------
# Конфигурация запусков (section.key=value)
# --------------------

def _split_list(v: Any) -> Any:
    """Парсит строку 'a,b,c' в список"""
    if isinstance(v, str):
        return [item.strip() for item in v.split(",") if item.strip()]
    return v


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DataSection(_Section):
    frames: int = Field(default=2000, gt=0)
    height: int = Field(default=96, gt=0)
    width: int = Field(default=96, gt=0)
    actors: int = Field(default=3, ge=0)
    seed: int = Field(default=7, ge=0)
    script: List[Tuple[int, str]] = Field(
        default_factory=lambda: [(0, "dark-indoor"), (50, "bright-outdoor")]
    )
    script_cycle: int = Field(default=100, ge=0)
    negatives_per_frame: int = Field(default=10, ge=0)
    depth_min: float = 0.5
    depth_max: float = 10.0

    @field_validator("script", mode="before")
    def parse_script(cls, v):
        """Парсит '0:dark-indoor,50:bright-outdoor' в список (кадр, режим)"""
        if isinstance(v, str):
            entries = []
            for item in _split_list(v):
                start, sep, name = item.partition(":")
                if not sep:
                    raise ValueError(f"script entry '{item}' must look like 'start:regime'")
                entries.append((int(start), name.strip()))
            return entries
        return v

    @field_validator("depth_max")
    def validate_depth_range(cls, v, info):
        low = info.data.get("depth_min")
        if low is not None and v <= low:
            raise ValueError("depth_max must exceed depth_min")
        return v


class ModelSection(_Section):
    modalities: List[str] = Field(default_factory=lambda: ["rgb", "depth"])
    channel_order: List[str] = Field(default_factory=lambda: ["rgb", "depth"])
    window: int = Field(default=32, gt=0)

    @field_validator("modalities", "channel_order", mode="before")
    def parse_modalities(cls, v):
        v = _split_list(v)
        allowed = {"rgb", "depth", "motion"}
        unknown = [m for m in v if m not in allowed]
        if unknown:
            raise ValueError(f"unknown modalities {unknown}, allowed: {sorted(allowed)}")
        if len(set(v)) != len(v):
            raise ValueError("modalities must be unique")
        return v


class TrainSection(_Section):
    lr: float = Field(default=0.01, ge=0.0)
    gate_lr: float = Field(default=0.005, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0)
    batch_size: int = Field(default=64, gt=0)
    epochs: int = Field(default=10, gt=0)
    gate_epochs: int = Field(default=10, gt=0)
    dropout: float = Field(default=0.5, ge=0.0, lt=1.0)
    seed: int = Field(default=7, ge=0)


class DetectSection(_Section):
    scales: List[int] = Field(default_factory=lambda: [32, 48, 64])
    aspect: float = Field(default=0.5, gt=0.0)
    stride_fraction: float = Field(default=0.25, gt=0.0)
    nms_iou: float = Field(default=0.3, gt=0.0, lt=1.0)

    @field_validator("scales", mode="before")
    def parse_scales(cls, v):
        return _split_list(v)


class EvalSection(_Section):
    iou: float = Field(default=0.6, gt=0.0, lt=1.0)


class RunConfig(_Section):
    """Полная конфигурация запуска; все ключи имеют значения по умолчанию."""

    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    detect: DetectSection = Field(default_factory=DetectSection)
    eval: EvalSection = Field(default_factory=EvalSection)

    def flat(self) -> Dict[str, str]:
        """Возвращает разрешенную конфигурацию в виде section.key -> строка"""
        flat: Dict[str, str] = {}
        for section_name in type(self).model_fields:
            section = getattr(self, section_name)
            for key in type(section).model_fields:
                flat[f"{section_name}.{key}"] = _render_value(getattr(section, key))
        return flat

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.flat().items())


def _render_value(value: Any) -> str:
    if isinstance(value, list):
        return ",".join(
            f"{item[0]}:{item[1]}" if isinstance(item, tuple) else str(item)
            for item in value
        )
    return str(value)


def _apply(raw: Dict[str, Dict[str, Tuple[str, str]]], key: str, value: str, where: str) -> None:
    section, dot, name = key.partition(".")
    if not dot or section not in RunConfig.model_fields:
        raise ConfigurationError(f"unknown key '{key}' at line {where}")
    section_cls = RunConfig.model_fields[section].annotation
    if name not in section_cls.model_fields:
        raise ConfigurationError(f"unknown key '{key}' at line {where}")
    raw.setdefault(section, {})[name] = (value, where)


def load_run_config(
    path: Optional[Path] = None,
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
) -> RunConfig:
    """
    Загружает конфигурацию из файла section.key=value.

    Args:
        path: Путь к файлу (None - только значения по умолчанию)
        overrides: Переопределения вида 'key=value' (--set)
        seed: Переопределение data.seed и train.seed (--seed)

    Raises:
        ConfigurationError: неизвестный ключ, битая строка или недопустимое значение
    """
    raw: Dict[str, Dict[str, Tuple[str, str]]] = {}

    if path is not None:
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise ConfigurationError(f"cannot read config '{path}': {e}")
        for number, line in enumerate(lines, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, sep, value = stripped.partition("=")
            if not sep:
                raise ConfigurationError(f"malformed line {number}: expected key=value")
            _apply(raw, key.strip(), value.strip(), str(number))

    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"malformed override '{item}': expected key=value")
        _apply(raw, key.strip(), value.strip(), "--set")

    if seed is not None:
        _apply(raw, "data.seed", str(seed), "--seed")
        _apply(raw, "train.seed", str(seed), "--seed")

    sections: Dict[str, Any] = {}
    for section, values in raw.items():
        section_cls = RunConfig.model_fields[section].annotation
        try:
            sections[section] = section_cls(**{k: v for k, (v, _) in values.items()})
        except ValidationError as e:
            first = e.errors()[0]
            name = str(first["loc"][0]) if first["loc"] else "?"
            where = values.get(name, ("", "?"))[1]
            raise ConfigurationError(
                f"invalid value for '{section}.{name}' at line {where}: {first['msg']}"
            )
    return RunConfig(**sections)
