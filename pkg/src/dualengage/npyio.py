"""Tensor file I/O in the NPY v1 on-disk layout.

Implemented directly (rather than through ``numpy.save``) so that malformed
files can be rejected with the exact byte offset of the first invalid byte.
Only C-ordered little-endian f32/f64 payloads are supported.
"""

from __future__ import annotations

import ast
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"\x93NUMPY"
_VERSION = b"\x01\x00"
_HEADER_ALIGN = 64

_DESCR_TO_DTYPE = {"<f4": np.float32, "<f8": np.float64}
_DTYPE_TO_DESCR = {np.dtype(np.float32): "<f4", np.dtype(np.float64): "<f8"}
_DESCR_TO_NAME = {"<f4": "f32", "<f8": "f64"}


class NpyFormatError(ValueError):
    """Raised for files that are not valid single-tensor NPY v1 files."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (first invalid byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class TensorFile:
    """Handle to a tensor persisted on disk."""

    path: Path
    dtype: str  # "f32" or "f64"
    shape: tuple[int, ...]


def write_tensor(tensor: np.ndarray, path: str | Path) -> TensorFile:
    """Write ``tensor`` to ``path`` in NPY v1 layout and return its handle.

    f32/f64 inputs are stored as-is; any other real dtype is cast to f32.
    """
    arr = np.asarray(tensor)
    if arr.dtype not in _DTYPE_TO_DESCR:
        arr = arr.astype(np.float32)
    if arr.ndim < 1:
        raise ValueError("tensor must have rank >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")

    descr = _DTYPE_TO_DESCR[arr.dtype]
    header = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (
        descr,
        _shape_literal(arr.shape),
    )
    base = len(MAGIC) + len(_VERSION) + 2  # bytes before the header text
    pad = -(base + len(header) + 1) % _HEADER_ALIGN
    header = header + " " * pad + "\n"

    path = Path(path)
    try:
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(_VERSION)
            f.write(struct.pack("<H", len(header)))
            f.write(header.encode("latin1"))
            f.write(np.ascontiguousarray(arr).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write tensor file '{path}': {exc}") from exc
    return TensorFile(path=path, dtype=_DESCR_TO_NAME[descr], shape=tuple(arr.shape))


def read_tensor(path: str | Path) -> np.ndarray:
    """Read an NPY v1 tensor written by :func:`write_tensor`."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read tensor file '{path}': {exc}") from exc

    for i, byte in enumerate(MAGIC):
        if i >= len(data):
            raise NpyFormatError("truncated file: magic string incomplete", i)
        if data[i] != byte:
            raise NpyFormatError("wrong magic string", i)
    if len(data) < 8:
        raise NpyFormatError("truncated file: version bytes missing", len(data))
    if data[6:8] != _VERSION:
        raise NpyFormatError(f"unsupported NPY version {data[6]}.{data[7]}", 6)
    if len(data) < 10:
        raise NpyFormatError("truncated file: header length missing", len(data))
    (header_len,) = struct.unpack("<H", data[8:10])
    header_end = 10 + header_len
    if len(data) < header_end:
        raise NpyFormatError("truncated file: header incomplete", len(data))

    header_text = data[10:header_end].decode("latin1")
    try:
        header = ast.literal_eval(header_text)
    except (ValueError, SyntaxError):
        raise NpyFormatError("unparseable header dict", 10) from None
    if not isinstance(header, dict):
        raise NpyFormatError("header is not a dict literal", 10)

    descr = header.get("descr")
    if descr not in _DESCR_TO_DTYPE:
        raise NpyFormatError(f"unsupported descr {descr!r} (need '<f4' or '<f8')", 10)
    if header.get("fortran_order") is not False:
        raise NpyFormatError("fortran_order=True payloads not supported", 10)
    shape = header.get("shape")
    if not isinstance(shape, tuple) or not all(
        isinstance(n, int) and n >= 0 for n in shape
    ):
        raise NpyFormatError(f"invalid shape {shape!r}", 10)

    dtype = np.dtype(_DESCR_TO_DTYPE[descr])
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = data[header_end:]
    if len(payload) < expected:
        raise NpyFormatError(
            f"payload too short: expected {expected} bytes, found {len(payload)}",
            len(data),
        )
    if len(payload) > expected:
        raise NpyFormatError("trailing bytes after payload", header_end + expected)

    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return arr.copy()


def describe(path: str | Path) -> TensorFile:
    """Return the handle for an existing tensor file without loading values."""
    arr = read_tensor(path)
    descr = _DTYPE_TO_DESCR[arr.dtype]
    return TensorFile(path=Path(path), dtype=_DESCR_TO_NAME[descr], shape=arr.shape)


def _shape_literal(shape: tuple[int, ...]) -> str:
    if len(shape) == 1:
        return f"({shape[0]},)"
    return "(" + ", ".join(str(n) for n in shape) + ")"
