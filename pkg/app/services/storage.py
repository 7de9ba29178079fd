"""
Файловые утилиты: key=value файлы и атомарная запись результатов.
"""
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, Union

from app.core.exceptions import InputError, ParseError

logger = logging.getLogger(__name__)


def decode_line(raw: bytes, path: Union[str, Path], offset: int) -> str:
    """Строгое UTF-8 декодирование строки файла; ошибка несёт смещение плохого байта"""
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(Path(path), offset + e.start, "invalid UTF-8")


def parse_key_values(path: Union[str, Path]) -> Dict[str, str]:
    """Читает файл key=value; пустые строки и # игнорируются"""
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise ParseError(path, 0, f"cannot read file: {e}")
    values: Dict[str, str] = {}
    offset = 0
    for raw in payload.splitlines(keepends=True):
        line = decode_line(raw, path, offset).strip()
        if line and not line.startswith("#"):
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ParseError(path, offset, f"expected key=value, got {line!r}")
            values[key.strip()] = value.strip()
        offset += len(raw)
    return values


def write_key_values(path: Union[str, Path], values: Dict[str, object]) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in values.items()), encoding="utf-8")


@contextmanager
def atomic_directory(final: Union[str, Path], overwrite: bool = True) -> Iterator[Path]:
    """
    Временный каталог рядом с итоговым; переименовывается при успехе,
    удаляется при ошибке.
    """
    final = Path(final)
    final.parent.mkdir(parents=True, exist_ok=True)
    if final.exists() and not final.is_dir():
        raise InputError(f"output path {final} exists and is not a directory")
    staging = Path(tempfile.mkdtemp(prefix=f".{final.name}.", dir=final.parent))
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if final.exists():
        if not overwrite:
            shutil.rmtree(staging, ignore_errors=True)
            raise InputError(f"output directory {final} already exists")
        shutil.rmtree(final)
    os.replace(staging, final)
    logger.debug(f"Результаты перемещены в {final}")


@contextmanager
def atomic_file(final: Union[str, Path]) -> Iterator[Path]:
    """Временный файл рядом с итоговым; os.replace при успехе"""
    final = Path(final)
    final.parent.mkdir(parents=True, exist_ok=True)
    handle, name = tempfile.mkstemp(prefix=f".{final.name}.", dir=final.parent)
    os.close(handle)
    staging = Path(name)
    try:
        yield staging
    except BaseException:
        staging.unlink(missing_ok=True)
        raise
    os.replace(staging, final)
