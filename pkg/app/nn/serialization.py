"""
Формат файлов тензоров MDTF.

Магические байты "MDTF", u32 LE ранг, ранг u32 LE размерностей,
затем product(dims) значений IEEE-754 float64 LE.
"""
import logging
from pathlib import Path
from typing import Union

import numpy as np

from app.core.exceptions import ParseError

logger = logging.getLogger(__name__)

MAGIC = b"MDTF"
_U32 = np.dtype("<u4")
_F64 = np.dtype("<f8")


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array, dtype=np.float64)
    header = MAGIC + np.asarray([array.ndim], dtype=_U32).tobytes()
    header += np.asarray(array.shape, dtype=_U32).tobytes()
    return header + np.ascontiguousarray(array, dtype=_F64).tobytes()


def decode_tensor(payload: bytes, source: Union[str, Path] = "<bytes>") -> np.ndarray:
    if len(payload) < 8:
        raise ParseError(source, len(payload), "file shorter than MDTF header")
    if payload[:4] != MAGIC:
        raise ParseError(source, 0, f"bad magic {payload[:4]!r}")
    rank = int(np.frombuffer(payload, dtype=_U32, count=1, offset=4)[0])
    dims_end = 8 + 4 * rank
    if len(payload) < dims_end:
        raise ParseError(source, len(payload), f"truncated dimension list (rank {rank})")
    dims = tuple(int(d) for d in np.frombuffer(payload, dtype=_U32, count=rank, offset=8))
    if any(d == 0 for d in dims):
        raise ParseError(source, 8, f"zero dimension in shape {dims}")
    count = int(np.prod(dims)) if dims else 1
    expected = dims_end + 8 * count
    if len(payload) != expected:
        offset = min(len(payload), expected)
        raise ParseError(
            source, offset,
            f"expected {expected} bytes for shape {dims}, found {len(payload)}",
        )
    values = np.frombuffer(payload, dtype=_F64, count=count, offset=dims_end)
    return values.astype(np.float64).reshape(dims)


def write_tensor(path: Union[str, Path], array: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise ParseError(path, 0, f"cannot read file: {e}")
    return decode_tensor(payload, path)
