"""Non-LLM verifier: compile, run, compare, and time candidate kernels.

Runners are external programs driven through a file-and-exit-code protocol so
the loop stays language neutral:

* ``produce`` mode writes the output tensor (KSTN format) to ``{output_path}``.
* ``time`` mode performs ``{warmup}`` unmeasured then ``{reps}`` measured
  executions and writes one nanosecond integer per measured run to
  ``{timing_path}``.
* exit code 0 means success; anything else is a failure of that phase.

Candidate failures and task-infrastructure failures travel on different
channels: only the former become attempt outcomes the conductor reasons about.
"""

from __future__ import annotations

import json
import os
import statistics
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    RunnerConfigError,
    TaskInfrastructureError,
    TimingProtocolError,
)
from .metrics import DEFAULT_TIMED_RUNS, DEFAULT_WARMUP_RUNS, TimingResult
from .tensorfile import read_tensor

CATEGORIES = ("matmul", "activation", "normalization", "pooling_reduction", "conv", "other")
STATUSES = ("build_error", "runtime_error", "incorrect_output", "correct")

DEFAULT_MAX_ATTEMPTS = 15
LOG_CAP_BYTES = 32 * 1024

# Timing phases are exclusive per host: concurrent timing runs would measure
# each other's interference.
_TIMING_LOCK = threading.Lock()

_PLACEHOLDERS = {"source_path", "output_path", "timing_path", "mode", "warmup", "reps", "task_dir"}


@dataclass(frozen=True)
class RunnerConfig:
    """Command template for one runner role (reference or candidate)."""

    argv: tuple[str, ...]
    build_argv: tuple[str, ...] | None = None
    timeout_s: float = 120.0
    env: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.argv:
            raise RunnerConfigError("runner argv must be non-empty")
        if self.timeout_s <= 0:
            raise RunnerConfigError("runner timeout_s must be positive")
        object.__setattr__(self, "argv", tuple(self.argv))
        if self.build_argv is not None:
            object.__setattr__(self, "build_argv", tuple(self.build_argv))

    def to_dict(self) -> dict:
        return {
            "argv": list(self.argv),
            "build_argv": list(self.build_argv) if self.build_argv else None,
            "timeout_s": self.timeout_s,
            "env": dict(self.env),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunnerConfig":
        return cls(
            argv=tuple(d["argv"]),
            build_argv=tuple(d["build_argv"]) if d.get("build_argv") else None,
            timeout_s=d.get("timeout_s", 120.0),
            env=dict(d.get("env", {})),
        )


@dataclass(frozen=True)
class Tolerance:
    atol: float = 1e-4
    rtol: float = 1e-4

    def __post_init__(self):
        if self.atol < 0 or self.rtol < 0:
            raise RunnerConfigError("tolerances must be >= 0")


@dataclass(frozen=True)
class CandidateKernel:
    """One generated kernel: source text, build configuration, round index."""

    source: str
    iteration: int
    language: str = "cpp"
    build_config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "iteration": self.iteration,
            "language": self.language,
            "build_config": dict(self.build_config),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateKernel":
        return cls(
            source=d["source"],
            iteration=d["iteration"],
            language=d.get("language", "cpp"),
            build_config=dict(d.get("build_config", {})),
        )


@dataclass(frozen=True)
class TaskSpec:
    """One optimization task: what to generate, how to check it, how long to try."""

    task_id: str
    category: str
    backend: str
    description: str
    runner: RunnerConfig
    candidate_runner_template: RunnerConfig
    tolerance: Tolerance = Tolerance()
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    seed: int = 0  # fixed per task so input generation is reproducible
    language: str = ""
    base_dir: str = "."

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise RunnerConfigError(f"unknown category {self.category!r}")
        if self.backend not in ("cpu", "gpu"):
            raise RunnerConfigError(f"unknown backend {self.backend!r}")
        if self.max_attempts < 1:
            raise RunnerConfigError("max_attempts must be >= 1")
        if not self.language:
            object.__setattr__(self, "language", "cpp" if self.backend == "cpu" else "triton")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "TaskSpec":
        tol = d.get("tolerance", {})
        return cls(
            task_id=d["task_id"],
            category=d["category"],
            backend=d["backend"],
            description=d["description"],
            runner=RunnerConfig.from_dict(d["runner"]),
            candidate_runner_template=RunnerConfig.from_dict(d["candidate_runner_template"]),
            tolerance=Tolerance(atol=tol.get("atol", 1e-4), rtol=tol.get("rtol", 1e-4)),
            max_attempts=d.get("max_attempts", DEFAULT_MAX_ATTEMPTS),
            seed=d.get("seed", 0),
            language=d.get("language", ""),
            base_dir=base_dir,
        )


def load_task(path: Path | str) -> TaskSpec:
    path = Path(path)
    # base_dir must stay valid from any child working directory
    return TaskSpec.from_dict(json.loads(path.read_text()), base_dir=str(path.parent.resolve()))


def discover_tasks(tasks_dir: Path | str) -> list[TaskSpec]:
    tasks = [load_task(p) for p in sorted(Path(tasks_dir).glob("*.json"))]
    if not tasks:
        raise TaskInfrastructureError(f"no task files found under {tasks_dir}")
    return tasks


@dataclass(frozen=True)
class CompareResult:
    passed: bool
    max_abs_err: float
    max_rel_err: float
    reason: str | None = None


@dataclass(frozen=True)
class VerificationOutcome:
    """What happened to one candidate: status, captured logs, errors, timing."""

    status: str
    logs: str = ""
    max_abs_err: float | None = None
    max_rel_err: float | None = None
    timing: TimingResult | None = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise RunnerConfigError(f"unknown verification status {self.status!r}")
        if (self.timing is not None) != (self.status == "correct"):
            raise RunnerConfigError("timing must be present exactly when status is correct")
        if self.status != "correct" and not self.logs:
            raise RunnerConfigError("error outcomes must carry logs")

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "logs": self.logs,
            "max_abs_err": self.max_abs_err,
            "max_rel_err": self.max_rel_err,
            "timing": self.timing.to_dict() if self.timing else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VerificationOutcome":
        return cls(
            status=d["status"],
            logs=d.get("logs", ""),
            max_abs_err=d.get("max_abs_err"),
            max_rel_err=d.get("max_rel_err"),
            timing=TimingResult.from_dict(d["timing"]) if d.get("timing") else None,
        )


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------

class _StrictMap(dict):
    def __missing__(self, key):
        raise RunnerConfigError(f"unresolvable runner placeholder {{{key}}}")


def substitute_argv(argv: tuple[str, ...], mapping: dict) -> list[str]:
    strict = _StrictMap(mapping)
    return [part.format_map(strict) for part in argv]


def truncate_log(text: str, cap: int = LOG_CAP_BYTES) -> str:
    """Head+tail truncation so prompts stay bounded but both ends survive."""
    raw = text.encode(errors="replace")
    if len(raw) <= cap:
        return text
    half = cap // 2
    head = raw[:half].decode(errors="replace")
    tail = raw[-half:].decode(errors="replace")
    return f"{head}\n...[log truncated, {len(raw)} bytes total]...\n{tail}"


def _run_child(argv: list[str], cwd: Path, env: dict, timeout_s: float):
    """Returns (returncode | None, combined_log, timed_out)."""
    full_env = dict(os.environ)
    full_env.update({k: str(v) for k, v in env.items()})
    try:
        proc = subprocess.run(
            argv, cwd=cwd, env=full_env, capture_output=True, text=True, timeout=timeout_s
        )
    except subprocess.TimeoutExpired:
        return None, f"timed out after {timeout_s}s", True
    except OSError as e:
        return 127, f"failed to launch {argv[0]!r}: {e}", False
    log = (proc.stdout or "") + (proc.stderr or "")
    return proc.returncode, log, False


def compare_tensors(a_path: Path | str, b_path: Path | str, atol: float, rtol: float) -> CompareResult:
    """Elementwise |a - b| <= atol + rtol * |b| with b as the reference anchor.

    Error magnitudes are reported even when the check passes.
    """
    a = read_tensor(a_path)
    b = read_tensor(b_path)
    if a.shape != b.shape:
        return CompareResult(False, float("inf"), float("inf"),
                             reason=f"shape mismatch: candidate {a.shape} vs reference {b.shape}")
    if a.dtype != b.dtype:
        return CompareResult(False, float("inf"), float("inf"),
                             reason=f"dtype mismatch: candidate {a.dtype} vs reference {b.dtype}")
    if a.size == 0:
        return CompareResult(True, 0.0, 0.0)
    af = a.astype(np.float64)
    bf = b.astype(np.float64)
    diff = np.abs(af - bf)
    bound = atol + rtol * np.abs(bf)
    ok = bool(np.all(diff <= bound))
    max_abs = float(diff.max())
    denom = np.maximum(np.abs(bf), np.finfo(np.float64).tiny)
    max_rel = float((diff / denom).max())
    reason = None
    if not ok:
        worst = int(np.argmax(diff - bound))
        reason = (
            f"value mismatch: max_abs_err={max_abs:.6g} exceeds atol={atol:g} + "
            f"rtol={rtol:g}*|ref| (flat index {worst})"
        )
    return CompareResult(ok, max_abs, max_rel, reason=reason)


def read_timing_file(path: Path | str, reps: int) -> list[int]:
    """Per-repetition nanosecond integers, exactly one per measured run."""
    try:
        lines = [l for l in Path(path).read_text().splitlines() if l.strip()]
    except FileNotFoundError:
        raise TimingProtocolError(f"timing file {path} was not written") from None
    samples: list[int] = []
    for i, line in enumerate(lines, start=1):
        try:
            value = int(line.strip())
        except ValueError:
            raise TimingProtocolError(f"timing file {path} line {i} is not an integer: {line!r}") from None
        if value <= 0:
            raise TimingProtocolError(f"timing file {path} line {i} is not positive: {value}")
        samples.append(value)
    if len(samples) != reps:
        raise TimingProtocolError(
            f"timing file {path} has {len(samples)} samples, expected {reps}"
        )
    return samples


def aggregate_times(samples: list[int], statistic: str = "median") -> float:
    if statistic == "median":
        return float(statistics.median(samples))
    if statistic == "mean":
        return float(statistics.fmean(samples))
    raise RunnerConfigError(f"unknown timing statistic {statistic!r}")


def _mapping(task: TaskSpec, *, mode: str, source_path: str, output_path: str,
             timing_path: str, warmup: int, reps: int) -> dict:
    return {
        "mode": mode,
        "source_path": source_path,
        "output_path": output_path,
        "timing_path": timing_path,
        "warmup": warmup,
        "reps": reps,
        "task_dir": task.base_dir,
    }


def time_candidate(
    task: TaskSpec,
    candidate: CandidateKernel,
    workdir: Path,
    *,
    warmup: int = DEFAULT_WARMUP_RUNS,
    reps: int = DEFAULT_TIMED_RUNS,
    statistic: str = "median",
) -> TimingResult:
    """Run reference and candidate in time mode and aggregate their samples.

    The candidate source must already be materialized (verify does this); the
    global timing lock keeps measurement phases exclusive per host.
    """
    workdir = Path(workdir)
    with _TIMING_LOCK:
        ref_map = _mapping(task, mode="time", source_path="candidate.src",
                           output_path="ref.kstn", timing_path="ref_times.txt",
                           warmup=warmup, reps=reps)
        rc, log, timed_out = _run_child(
            substitute_argv(task.runner.argv, ref_map), workdir, task.runner.env,
            task.runner.timeout_s,
        )
        if rc != 0 or timed_out:
            raise TaskInfrastructureError(f"reference timing run failed: {truncate_log(log)}")
        try:
            ref_samples = read_timing_file(workdir / "ref_times.txt", reps)
        except TimingProtocolError as e:
            raise TaskInfrastructureError(f"reference timing protocol violation: {e}") from e

        cand_map = _mapping(task, mode="time", source_path="candidate.src",
                            output_path="out.kstn", timing_path="times.txt",
                            warmup=warmup, reps=reps)
        cfg = task.candidate_runner_template
        rc, log, timed_out = _run_child(
            substitute_argv(cfg.argv, cand_map), workdir, cfg.env, cfg.timeout_s
        )
        if timed_out:
            raise TimingProtocolError(f"candidate timing run timed out: {truncate_log(log)}")
        if rc != 0:
            raise TimingProtocolError(f"candidate timing run exited {rc}: {truncate_log(log)}")
        cand_samples = read_timing_file(workdir / "times.txt", reps)

    return TimingResult(
        t_reference_ns=aggregate_times(ref_samples, statistic),
        t_candidate_ns=aggregate_times(cand_samples, statistic),
        warmup_runs=warmup,
        timed_runs=reps,
        per_run_samples=tuple(cand_samples),
        t_reference_mean_ns=aggregate_times(ref_samples, "mean"),
        t_candidate_mean_ns=aggregate_times(cand_samples, "mean"),
    )


def verify(
    task: TaskSpec,
    candidate: CandidateKernel,
    workdir: Path | str,
    *,
    warmup: int = DEFAULT_WARMUP_RUNS,
    reps: int = DEFAULT_TIMED_RUNS,
    statistic: str = "median",
) -> VerificationOutcome:
    """Full verification: materialize, build, produce both outputs, compare, time.

    Reference-side failures raise TaskInfrastructureError and abort the task;
    candidate-side failures come back as outcomes the loop can reason about.
    """
    if not candidate.source:
        return VerificationOutcome(status="build_error", logs="candidate source is empty")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    (workdir / "candidate.src").write_text(candidate.source)

    cfg = task.candidate_runner_template
    if cfg.build_argv:
        build_map = _mapping(task, mode="build", source_path="candidate.src",
                             output_path="out.kstn", timing_path="times.txt",
                             warmup=warmup, reps=reps)
        rc, log, timed_out = _run_child(
            substitute_argv(cfg.build_argv, build_map), workdir, cfg.env, cfg.timeout_s
        )
        (workdir / "build.log").write_text(log)
        if rc != 0 or timed_out:
            return VerificationOutcome(status="build_error", logs=truncate_log(log) or "build failed")

    ref_map = _mapping(task, mode="produce", source_path="candidate.src",
                       output_path="ref.kstn", timing_path="ref_times.txt",
                       warmup=warmup, reps=reps)
    rc, log, timed_out = _run_child(
        substitute_argv(task.runner.argv, ref_map), workdir, task.runner.env, task.runner.timeout_s
    )
    if rc != 0 or timed_out:
        raise TaskInfrastructureError(
            f"reference runner failed for task {task.task_id}: {truncate_log(log)}"
        )

    cand_map = _mapping(task, mode="produce", source_path="candidate.src",
                        output_path="out.kstn", timing_path="times.txt",
                        warmup=warmup, reps=reps)
    rc, log, timed_out = _run_child(
        substitute_argv(cfg.argv, cand_map), workdir, cfg.env, cfg.timeout_s
    )
    (workdir / "run.log").write_text(log)
    if timed_out:
        return VerificationOutcome(status="runtime_error", logs=truncate_log(log))
    if rc != 0:
        return VerificationOutcome(
            status="runtime_error",
            logs=truncate_log(log) or f"candidate exited {rc}",
        )
    if not (workdir / "out.kstn").exists():
        return VerificationOutcome(status="runtime_error",
                                   logs=truncate_log(log) or "candidate wrote no output tensor")

    cmp = compare_tensors(workdir / "out.kstn", workdir / "ref.kstn",
                          task.tolerance.atol, task.tolerance.rtol)
    if not cmp.passed:
        return VerificationOutcome(
            status="incorrect_output",
            logs=truncate_log((cmp.reason or "outputs differ") + ("\n" + log if log else "")),
            max_abs_err=cmp.max_abs_err,
            max_rel_err=cmp.max_rel_err,
        )

    try:
        timing = time_candidate(task, candidate, workdir, warmup=warmup, reps=reps,
                                statistic=statistic)
    except TimingProtocolError as e:
        return VerificationOutcome(status="runtime_error", logs=truncate_log(str(e)))
    return VerificationOutcome(
        status="correct",
        logs="",
        max_abs_err=cmp.max_abs_err,
        max_rel_err=cmp.max_rel_err,
        timing=timing,
    )
