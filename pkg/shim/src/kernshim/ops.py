"""Reference operators and seeded input generation.

Inputs are fully determined by (shapes, dtype, seed): same manifest, same
bytes, every run. Torch runs single-threaded here so timing comparisons
against single-threaded native candidates stay honest.
"""

from __future__ import annotations

import torch

from .manifest import ShimManifest

torch.set_num_threads(1)

_DTYPES = {
    "float32": torch.float32,
    "float64": torch.float64,
}


def make_inputs(manifest: ShimManifest) -> list[torch.Tensor]:
    dtype = _DTYPES.get(manifest.dtype)
    if dtype is None:
        raise ValueError(f"unsupported dtype {manifest.dtype}")
    gen = torch.Generator().manual_seed(manifest.seed)
    return [torch.rand(shape, dtype=dtype, generator=gen) for shape in manifest.shapes]


def _dim(manifest: ShimManifest) -> int:
    return int(manifest.params.get("dim", 0))


def reference_op(manifest: ShimManifest):
    name = manifest.op_name
    if name == "add":
        return lambda a, b: a + b
    if name == "mul":
        return lambda a, b: a * b
    if name == "relu":
        return lambda a: torch.relu(a)
    if name == "max_reduce":
        dim = _dim(manifest)
        return lambda a: torch.max(a, dim=dim).values
    if name == "sum_reduce":
        dim = _dim(manifest)
        return lambda a: torch.sum(a, dim=dim)
    if name == "matmul":
        return lambda a, b: a @ b
    raise ValueError(f"unknown reference op {name!r}")
