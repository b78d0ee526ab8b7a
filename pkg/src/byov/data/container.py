"""Binary embedding container.

Layout (bit-exact): magic b"BYV1", then little-endian u32 T, u32 N, u32 d,
then T*N*d little-endian IEEE-754 float32 values in row-major (t, n, channel)
order. No padding, no footer.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"BYV1"
_HEADER = struct.Struct("<III")


def write_embeddings(path: str, data: np.ndarray) -> None:
    if data.ndim != 3:
        raise FormatError(f"expected a T x N x d array, got shape {data.shape}")
    arr = np.ascontiguousarray(data, dtype="<f4")
    if not np.all(np.isfinite(arr)):
        raise FormatError("refusing to write non-finite embeddings")
    t, n, d = arr.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(t, n, d))
        f.write(arr.tobytes())


def read_embeddings(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 + _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes {blob[:4]!r}")
    t, n, d = _HEADER.unpack_from(blob, 4)
    expected = 4 + _HEADER.size + 4 * t * n * d
    if len(blob) != expected:
        raise FormatError(f"{path}: payload size {len(blob)} != expected {expected}"
                          f" for header T={t} N={n} d={d}")
    arr = np.frombuffer(blob, dtype="<f4", offset=4 + _HEADER.size).reshape(t, n, d)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: non-finite values in payload")
    return np.ascontiguousarray(arr)
