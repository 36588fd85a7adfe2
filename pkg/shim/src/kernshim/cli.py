"""Runner-protocol entry point.

    kernshim <mode> --manifest m.json --source <path|@reference> \
        --output out.kstn --timing times.txt --warmup N --reps M

``produce`` writes the output tensor (KSTN); ``time`` performs the warmup
then writes one nanosecond integer per measured repetition. Exit code 0 on
success; failures print a diagnostic to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np
import torch

from .compile import BuildError, build_cpp, load_kernel, load_triton_kernel
from .kstn import write_tensor
from .manifest import ShimManifest
from .ops import make_inputs, reference_op

REFERENCE_SENTINEL = "@reference"


def _np_inputs(tensors) -> list[np.ndarray]:
    return [np.ascontiguousarray(t.numpy(), dtype=np.float32) for t in tensors]


class _Runner:
    """One callable per invocation: () -> np.ndarray output."""

    def __init__(self, manifest: ShimManifest, source: str, workdir: Path):
        self.manifest = manifest
        self.inputs_t = make_inputs(manifest)
        ref = reference_op(manifest)
        self.gpu = False
        if source == REFERENCE_SENTINEL:
            self._call = lambda: ref(*self.inputs_t)
        elif manifest.candidate_kind == "triton_source":
            kernel_main = load_triton_kernel(source)
            self.inputs_t = [t.cuda() for t in self.inputs_t]
            self.gpu = True
            self._call = lambda: kernel_main(*self.inputs_t)
        else:
            lib = build_cpp(source, workdir, manifest.extra_cflags)
            kernel = load_kernel(lib)
            np_inputs = _np_inputs(self.inputs_t)
            out_shape = tuple(ref(*self.inputs_t).shape)
            out = np.zeros(out_shape, dtype=np.float32)

            def call():
                kernel(np_inputs, out)
                return out

            self._call = call

    def __call__(self) -> np.ndarray:
        result = self._call()
        if isinstance(result, torch.Tensor):
            if result.is_cuda:
                result = result.cpu()
            return result.detach().to(torch.float32).numpy()
        return np.asarray(result, dtype=np.float32)

    def timed_call_ns(self) -> int:
        if self.gpu:
            torch.cuda.synchronize()
        start = time.perf_counter_ns()
        self._call()
        if self.gpu:
            torch.cuda.synchronize()
        return max(time.perf_counter_ns() - start, 1)


def run(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="kernshim")
    parser.add_argument("mode", choices=["produce", "time"])
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--source", required=True)
    parser.add_argument("--output", default="out.kstn")
    parser.add_argument("--timing", default="times.txt")
    parser.add_argument("--warmup", type=int, default=5)
    parser.add_argument("--reps", type=int, default=100)
    args = parser.parse_args(argv)

    try:
        manifest = ShimManifest.load(args.manifest)
        runner = _Runner(manifest, args.source, Path.cwd())
        if args.mode == "produce":
            write_tensor(args.output, runner())
        else:
            if args.warmup < 0 or args.reps < 1:
                raise ValueError("warmup must be >= 0 and reps >= 1")
            for _ in range(args.warmup):
                runner._call()
            samples = [runner.timed_call_ns() for _ in range(args.reps)]
            with open(args.timing, "w") as f:
                for ns in samples:
                    f.write(f"{ns}\n")
        return 0
    except BuildError as e:
        print(f"error: {e}", file=sys.stderr)
        if e.compiler_output:
            print(e.compiler_output, file=sys.stderr)
        return 1
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
