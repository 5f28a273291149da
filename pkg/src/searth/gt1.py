"""GT1: a small little-endian binary container for dense arrays.

Record layout::

    b"GTEN" | version u32 | dtype u8 (0 f32, 1 f64) | ndim u32 | dims u32 x ndim
    | payload (row-major, little-endian) | payload byte count u64

A named archive is ``u32 entry count`` followed by, per entry,
``u16 name length | UTF-8 name | one record``.
"""

from __future__ import annotations

import io
import os
import struct
from typing import Mapping

import numpy as np

from .errors import BadMagicError, IOFormatError, MissingFileError, ShapeError, TruncatedError, VersionMismatchError

MAGIC = b"GTEN"
VERSION = 1
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def encode_record(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.ndim == 0:
        raise ShapeError("GT1 records need at least one dimension")
    if any(n <= 0 for n in arr.shape):
        raise ShapeError(f"GT1 extents must be positive, got {arr.shape}")
    dt = arr.dtype.newbyteorder("<")
    if dt not in _CODES:
        raise ShapeError(f"GT1 stores float32 or float64, got {arr.dtype}")
    payload = np.ascontiguousarray(arr, dtype=dt).tobytes()
    head = MAGIC + struct.pack("<IBI", VERSION, _CODES[dt], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + payload + struct.pack("<Q", len(payload))


def _read_exact(buf: io.BufferedIOBase, n: int, what: str) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise TruncatedError(f"file ends inside {what} ({len(data)} of {n} bytes)")
    return data


def decode_record(buf: io.BufferedIOBase) -> np.ndarray:
    magic = buf.read(4)
    if magic != MAGIC:
        if len(magic) < 4:
            raise TruncatedError("file ends before record magic")
        raise BadMagicError(f"expected {MAGIC!r}, found {magic!r}")
    version, code, ndim = struct.unpack("<IBI", _read_exact(buf, 9, "header"))
    if version != VERSION:
        raise VersionMismatchError(f"GT1 version {version}, reader supports {VERSION}")
    if code not in _DTYPES:
        raise IOFormatError(f"unknown dtype code {code}")
    if ndim == 0:
        raise IOFormatError("record has an empty dims list")
    dims = struct.unpack(f"<{ndim}I", _read_exact(buf, 4 * ndim, "dims"))
    dtype = _DTYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = _read_exact(buf, nbytes, "payload")
    (count,) = struct.unpack("<Q", _read_exact(buf, 8, "trailing byte count"))
    if count != nbytes:
        raise TruncatedError(f"trailing count {count} does not match payload size {nbytes}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def encode_archive(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ShapeError(f"tensor name too long: {name[:40]}...")
        parts.append(struct.pack("<H", len(raw)) + raw + encode_record(arr))
    return b"".join(parts)


def decode_archive(buf: io.BufferedIOBase) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", _read_exact(buf, 4, "entry count"))
    out = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", _read_exact(buf, 2, "name length"))
        name = _read_exact(buf, n, "name").decode("utf-8")
        if name in out:
            raise IOFormatError(f"duplicate tensor name {name!r}")
        out[name] = decode_record(buf)
    return out


def _check_end(buf) -> None:
    if buf.read(1):
        raise IOFormatError("unexpected bytes after the last record")


def _looks_like_archive(fh, head: bytes) -> bool:
    # an archive's first entry is followed by a record magic; an empty one ends after its count
    (count,) = struct.unpack("<I", head)
    rest = fh.read(2)
    if count == 0:
        return rest == b""
    if len(rest) < 2:
        return True  # let the decoder report the truncation
    (n,) = struct.unpack("<H", rest)
    fh.seek(6 + n)
    magic = fh.read(4)
    return len(magic) < 4 or magic == MAGIC


def gt1_write(path, tensors) -> None:
    """Write one array, or a name -> array mapping as an archive."""
    if isinstance(tensors, Mapping):
        blob = encode_archive(tensors)
    else:
        blob = encode_record(tensors)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def gt1_read(path):
    """Inverse of :func:`gt1_write`: an array or a dict of arrays."""
    if not os.path.exists(path):
        raise MissingFileError(f"no such file: {path}")
    with open(path, "rb") as fh:
        head = fh.read(4)
        if len(head) < 4:
            raise TruncatedError(f"{path}: file too short")
        if head != MAGIC and not _looks_like_archive(fh, head):
            raise BadMagicError(f"{path}: expected {MAGIC!r} or a named archive, found {head!r}")
        fh.seek(0)
        out = decode_record(fh) if head == MAGIC else decode_archive(fh)
        _check_end(fh)
    return out
