"""Little-endian tensor container shared by episode and checkpoint files.

Layout::

    b"UNIC" | version: u32 LE | header length: u64 LE | UTF-8 JSON header | tensor bytes

Tensor bytes are raw little-endian floats in the order the header declares.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

import numpy as np

from .errors import FormatError

MAGIC = b"UNIC"
VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")


def write_container(fh: BinaryIO, header: dict, tensors: list[np.ndarray], dtype: str = "<f4") -> None:
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    fh.write(_PREAMBLE.pack(MAGIC, VERSION, len(blob)))
    fh.write(blob)
    for t in tensors:
        fh.write(np.ascontiguousarray(t, dtype=dtype).tobytes())


def read_header(fh: BinaryIO, what: str = "episode") -> dict:
    pre = fh.read(_PREAMBLE.size)
    if len(pre) < 4 or pre[:4] != MAGIC:
        raise FormatError(f"not a UNIC {what} file")
    if len(pre) < _PREAMBLE.size:
        raise FormatError("unexpected end of header")
    _, version, hlen = _PREAMBLE.unpack(pre)
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    blob = fh.read(hlen)
    if len(blob) < hlen:
        raise FormatError("unexpected end of header")
    try:
        return json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}") from exc


def read_tensor(fh: BinaryIO, shape: tuple, dtype: str = "<f4") -> np.ndarray:
    dt = np.dtype(dtype)
    n = int(np.prod(shape)) if shape else 1
    raw = fh.read(n * dt.itemsize)
    if len(raw) < n * dt.itemsize:
        raise FormatError("unexpected end of tensor block")
    return np.frombuffer(raw, dtype=dt).astype(dt.newbyteorder("="), copy=True).reshape(shape)
