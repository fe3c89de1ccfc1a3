"""
Tensor serialization.

Each record is a plain-text header line ``"ndims d0 d1 ...\\n"`` followed by
the little-endian float32 payload in row-major order. Files may hold several
records back to back; readers address them by byte offset.
"""

from __future__ import annotations

from typing import BinaryIO, Iterable, Union

import numpy as np

from src.errors import DataError
from src.ndarr.tensor import MAX_DIMS, Tensor

ArrayLike = Union[Tensor, np.ndarray]

_DTYPE = np.dtype("<f4")


def _as_array(value: ArrayLike) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else np.asarray(value)


def encode_tensor(value: ArrayLike) -> bytes:
    arr = _as_array(value)
    if arr.ndim > MAX_DIMS:
        raise DataError(f"Cannot serialize {arr.ndim}-axis array")
    header = " ".join(str(n) for n in (arr.ndim, *arr.shape)) + "\n"
    return header.encode("ascii") + np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()


def write_tensor(f: BinaryIO, value: ArrayLike) -> int:
    """Append one record; returns its byte offset."""
    offset = f.tell()
    f.write(encode_tensor(value))
    return offset


def write_tensors(f: BinaryIO, values: Iterable[ArrayLike]) -> list[int]:
    return [write_tensor(f, v) for v in values]


def read_tensor(f: BinaryIO, offset: int | None = None) -> np.ndarray:
    """Read the record at ``offset`` (or the current position) as float32."""
    if offset is not None:
        f.seek(offset)
    line = f.readline()
    if not line.endswith(b"\n"):
        raise DataError("Truncated tensor header")
    try:
        fields = [int(tok) for tok in line.decode("ascii").split()]
    except (UnicodeDecodeError, ValueError):
        raise DataError(f"Malformed tensor header: {line[:40]!r}") from None
    if not fields or fields[0] != len(fields) - 1 or fields[0] > MAX_DIMS or min(fields) < 0:
        raise DataError(f"Malformed tensor header: {line[:40]!r}")
    shape = tuple(fields[1:])
    count = int(np.prod(shape)) if shape else 1
    payload = f.read(count * _DTYPE.itemsize)
    if len(payload) != count * _DTYPE.itemsize:
        raise DataError(f"Truncated tensor payload: expected {count} values")
    return np.frombuffer(payload, dtype=_DTYPE).astype(np.float32).reshape(shape)
