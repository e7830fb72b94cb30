"""Portable tensor archive.

Each record is a one-line JSON header ``{"name", "dtype": "f64", "shape"}``
followed by the raw little-endian float64 payload in row-major order.
Archives are plain concatenations of records.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

DTYPE = "f64"
_LE_F64 = np.dtype("<f8")


class ContainerError(ValueError):
    """Malformed archive; message carries the byte offset of the problem."""


def encode_record(name: str, array) -> bytes:
    arr = np.array(array, dtype=np.float64, order="C")
    header = json.dumps({"name": name, "dtype": DTYPE, "shape": list(arr.shape)}, separators=(",", ":"))
    return header.encode("utf-8") + b"\n" + arr.astype(_LE_F64, copy=False).tobytes()


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    return b"".join(encode_record(name, arr) for name, arr in tensors.items())


def loads(buf: bytes) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    pos = 0
    while pos < len(buf):
        nl = buf.find(b"\n", pos)
        if nl < 0:
            raise ContainerError(f"unterminated header at byte {pos}")
        try:
            header = json.loads(buf[pos:nl].decode("utf-8"))
            name, dtype, shape = header["name"], header["dtype"], [int(s) for s in header["shape"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise ContainerError(f"malformed header at byte {pos}: {exc}") from None
        if dtype != DTYPE:
            raise ContainerError(f"unsupported dtype {dtype!r} at byte {pos}")
        if any(s < 0 for s in shape):
            raise ContainerError(f"negative dimension in header at byte {pos}")
        if name in out:
            raise ContainerError(f"duplicate record {name!r} at byte {pos}")
        start = nl + 1
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if start + nbytes > len(buf):
            raise ContainerError(
                f"truncated payload for {name!r} at byte {start}: "
                f"expected {nbytes} bytes, found {len(buf) - start}"
            )
        out[name] = np.frombuffer(buf, dtype=_LE_F64, count=nbytes // 8, offset=start).astype(np.float64).reshape(shape)
        pos = start + nbytes
    return out


def save(path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())


def encode_text(text: str) -> np.ndarray:
    """Pack UTF-8 text as a float64 byte vector so it fits the archive format."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def decode_text(values: np.ndarray) -> str:
    return np.asarray(values, dtype=np.uint8).tobytes().decode("utf-8")
