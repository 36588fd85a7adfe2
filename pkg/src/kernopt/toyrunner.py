"""Minimal runner-protocol implementation for demos and deterministic tests.

Candidate sources are Python fragments defining ``compute(xs) -> list`` over a
fixed input vector, plus an optional integer ``TIME_NS`` that time mode emits
verbatim for every measured repetition. That makes end-to-end speedups exact
and runs byte-reproducible, which real wall clocks never are.

Errors print one concise line to stderr (no tracebacks, no absolute paths) so
captured logs stay stable across machines.

Usage:
    python3 -m kernopt.toyrunner --mode produce --source f.py --output out.kstn \
        --timing times.txt --warmup 5 --reps 100 [--n 16]
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .tensorfile import write_tensor

DEFAULT_TIME_NS = 1_000_000


def input_vector(n: int) -> list[float]:
    # Fixed, seedless pattern: same input on every host and every run.
    return [float(i % 7) + 0.5 * i for i in range(n)]


def run(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="toyrunner", add_help=False)
    parser.add_argument("--mode", required=True, choices=["produce", "time"])
    parser.add_argument("--source", required=True)
    parser.add_argument("--output", default="out.kstn")
    parser.add_argument("--timing", default="times.txt")
    parser.add_argument("--warmup", type=int, default=5)
    parser.add_argument("--reps", type=int, default=100)
    parser.add_argument("--n", type=int, default=16)
    args = parser.parse_args(argv)

    try:
        with open(args.source) as f:
            source = f.read()
        namespace: dict = {}
        exec(source, namespace)
        compute = namespace.get("compute")
        if not callable(compute):
            raise ValueError("source must define compute(xs)")

        if args.mode == "produce":
            result = compute(input_vector(args.n))
            write_tensor(args.output, np.asarray(result, dtype=np.float64))
        else:
            if args.warmup < 0 or args.reps < 1:
                raise ValueError("warmup must be >= 0 and reps >= 1")
            time_ns = int(namespace.get("TIME_NS", DEFAULT_TIME_NS))
            for _ in range(args.warmup):
                compute(input_vector(args.n))
            with open(args.timing, "w") as f:
                for _ in range(args.reps):
                    compute(input_vector(args.n))
                    f.write(f"{time_ns}\n")
        return 0
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(run())
