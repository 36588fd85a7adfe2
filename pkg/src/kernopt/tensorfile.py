"""Self-describing binary tensor files exchanged between the harness and runners.

Layout (all integers little-endian):

    offset  size        field
    0       4           magic ``KSTN``
    4       1           dtype code (see DTYPE_CODES)
    5       8           rank, u64
    13      8 * rank    dims, u64 each
    ...     data        row-major elements, native dtype width

Binary rather than text so correctness comparisons are exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import TensorFormatError

MAGIC = b"KSTN"

DTYPE_CODES = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<i4"),
    4: np.dtype("<i8"),
    5: np.dtype("<f2"),
}
_CODE_FOR_KIND = {np.dtype(d).str.lstrip("<>|="): code for code, d in DTYPE_CODES.items()}

_MAX_RANK = 32


def write_tensor(path: Path | str, array: np.ndarray) -> None:
    arr = np.asarray(array)
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    key = arr.dtype.newbyteorder("<").str.lstrip("<>|=")
    code = _CODE_FOR_KIND.get(key)
    if code is None:
        raise TensorFormatError(f"unsupported dtype {arr.dtype}")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", code))
        f.write(struct.pack("<Q", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))


def read_tensor(path: Path | str) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 13:
        raise TensorFormatError(f"{path}: file too short for a tensor header")
    if raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {raw[:4]!r}")
    code = raw[4]
    dtype = DTYPE_CODES.get(code)
    if dtype is None:
        raise TensorFormatError(f"{path}: unknown dtype code {code}")
    (rank,) = struct.unpack_from("<Q", raw, 5)
    if rank > _MAX_RANK:
        raise TensorFormatError(f"{path}: implausible rank {rank}")
    header_end = 13 + 8 * rank
    if len(raw) < header_end:
        raise TensorFormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{rank}Q", raw, 13) if rank else ()
    count = 1
    for d in dims:
        count *= d
    payload = raw[header_end:]
    expected = count * dtype.itemsize
    if len(payload) != expected:
        raise TensorFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} for shape {tuple(dims)}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
