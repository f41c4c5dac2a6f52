"""TNSR binary tensor container shared by feature maps and checkpoints.

Layout (little-endian)::

    b"TNSR" | version u32 | dtype u8 | rank u32 | dims u64[rank] | payload

dtype 0 is float32, 1 is float64; the payload is row-major.  A file may hold
several records back to back (checkpoints do).
"""
from __future__ import annotations

import io
import struct
from typing import BinaryIO, Iterator

import numpy as np

from .errors import ParseError

MAGIC = b"TNSR"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
CODES = {v: k for k, v in DTYPES.items()}


def write_tensor(fh: BinaryIO, arr: np.ndarray, dtype="<f4") -> None:
    dt = np.dtype(dtype)
    if dt not in CODES:
        raise ValueError(f"unsupported dtype {dt}")
    arr = np.ascontiguousarray(arr, dtype=dt)
    fh.write(MAGIC)
    fh.write(struct.pack("<IBI", VERSION, CODES[dt], arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ParseError("truncated TNSR record")
    return buf


def read_tensor(fh: BinaryIO) -> np.ndarray:
    if _read_exact(fh, 4) != MAGIC:
        raise ParseError("bad TNSR magic")
    version, code, rank = struct.unpack("<IBI", _read_exact(fh, 9))
    if version != VERSION:
        raise ParseError(f"unsupported TNSR version {version}")
    if code not in DTYPES:
        raise ParseError(f"unknown TNSR dtype code {code}")
    dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank)) if rank else ()
    dt = DTYPES[code]
    count = int(np.prod(dims)) if dims else 1
    data = np.frombuffer(_read_exact(fh, count * dt.itemsize), dtype=dt)
    return data.reshape(dims).copy()


def iter_tensors(fh: BinaryIO) -> Iterator[np.ndarray]:
    while True:
        pos = fh.tell()
        if fh.read(1) == b"":
            return
        fh.seek(pos)
        yield read_tensor(fh)


def save(path, arr: np.ndarray, dtype="<f4") -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, arr, dtype)


def load(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def dumps(arr: np.ndarray, dtype="<f4") -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, arr, dtype)
    return buf.getvalue()


def loads(data: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(data))
