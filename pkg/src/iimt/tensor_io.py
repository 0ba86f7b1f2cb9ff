"""Binary tensor file format.

Layout (all integers little-endian)::

    b"IIMT" | version u16 | dtype code u8 | rank u8 | dims u64 * rank | raw elements
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

from .errors import ValidationError

MAGIC = b"IIMT"
FORMAT_VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("<i8"): 3,
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}

PathOrFile = Union[str, Path, BinaryIO]


def tensor_to_bytes(array) -> bytes:
    arr = np.asarray(getattr(array, "data", array))
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    if np.issubdtype(dt, np.integer):
        dt = np.dtype("<i8")
    dt = np.dtype(dt).newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise ValidationError(f"unsupported dtype {arr.dtype} for tensor file")
    if arr.ndim > 255:
        raise ValidationError("rank exceeds 255")
    header = MAGIC + struct.pack("<HBB", FORMAT_VERSION, _DTYPE_CODES[dt], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=dt).tobytes(order="C")


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(buf))


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        raise ValidationError(f"bad magic {magic!r}; not a tensor file")
    version, code, rank = struct.unpack("<HBB", fh.read(4))
    if version != FORMAT_VERSION:
        raise ValidationError(f"unsupported tensor format version {version}")
    if code not in _CODE_DTYPES:
        raise ValidationError(f"unknown dtype code {code}")
    dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
    dt = _CODE_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    raw = fh.read(count * dt.itemsize)
    if len(raw) != count * dt.itemsize:
        raise ValidationError("truncated tensor payload")
    return np.frombuffer(raw, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))


def save_tensor(target: PathOrFile, array) -> None:
    payload = tensor_to_bytes(array)
    if hasattr(target, "write"):
        target.write(payload)
    else:
        Path(target).write_bytes(payload)


def load_tensor(source: PathOrFile) -> np.ndarray:
    if hasattr(source, "read"):
        return read_tensor(source)
    with open(source, "rb") as fh:
        return read_tensor(fh)
