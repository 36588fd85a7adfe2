"""Writer for the harness's KSTN tensor files.

Layout: magic ``KSTN`` (4 bytes), dtype code (u8), rank (u64 LE),
dims (rank x u64 LE), then row-major element data. Independent
implementation of the documented format; byte compatibility with the
harness reader is covered by the conformance tests.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"KSTN"

DTYPE_CODES = {
    "float32": 1,
    "float64": 2,
    "int32": 3,
    "int64": 4,
    "float16": 5,
}


def write_tensor(path: Path | str, array: np.ndarray) -> None:
    arr = np.asarray(array)
    code = DTYPE_CODES.get(arr.dtype.name)
    if code is None:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", code))
        f.write(struct.pack("<Q", arr.ndim))
        if arr.ndim:
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))
