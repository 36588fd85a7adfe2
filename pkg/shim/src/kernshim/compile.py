"""Native candidate build and load.

Candidate contract (CPU): a C++ file exporting

    extern "C" void run(const float* const* inputs, float* output);

Inputs and output are float32, row-major, with shapes fixed by the task (the
generating model knows them from the task statement and bakes them in). The
shim owns allocation; the kernel only reads inputs and fills output.
"""

from __future__ import annotations

import ctypes
import subprocess
from pathlib import Path

import numpy as np

BASE_CFLAGS = ("-O3", "-march=native", "-shared", "-fPIC", "-x", "c++")


class BuildError(RuntimeError):
    def __init__(self, message: str, compiler_output: str = ""):
        self.compiler_output = compiler_output
        super().__init__(message)


def build_cpp(source_path: Path | str, workdir: Path | str, extra_cflags=()) -> Path:
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    lib_path = workdir / "candidate_lib.so"
    argv = ["g++", *BASE_CFLAGS, *extra_cflags, str(source_path), "-o", str(lib_path)]
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        raise BuildError(
            f"candidate build failed (g++ exited {proc.returncode})",
            compiler_output=proc.stderr or proc.stdout,
        )
    return lib_path


def load_kernel(lib_path: Path | str):
    lib = ctypes.CDLL(str(lib_path))
    try:
        fn = lib.run
    except AttributeError:
        raise BuildError("candidate library does not export run()") from None
    float_p = ctypes.POINTER(ctypes.c_float)
    fn.argtypes = [ctypes.POINTER(float_p), float_p]
    fn.restype = None

    def kernel(inputs: list[np.ndarray], output: np.ndarray) -> None:
        ptrs = (float_p * len(inputs))(
            *[arr.ctypes.data_as(float_p) for arr in inputs]
        )
        fn(ptrs, output.ctypes.data_as(float_p))

    return kernel


def load_triton_kernel(source_path: Path | str):
    """GPU path: the candidate module must define kernel_main(*tensors) -> tensor."""
    import torch

    if not torch.cuda.is_available():
        raise BuildError("triton candidates need a CUDA device")
    namespace: dict = {}
    exec(Path(source_path).read_text(), namespace)
    kernel_main = namespace.get("kernel_main")
    if not callable(kernel_main):
        raise BuildError("triton candidate must define kernel_main(*inputs)")
    return kernel_main
