"""Closed-loop state machine: generate -> verify -> (repair | profile -> diagnose -> refine).

Every attempt is persisted before the next one starts, so a killed run resumes
from the last completed iteration with no duplicated model calls. The
historical best record only moves on strict improvement, which makes its
speedup sequence strictly increasing over a run.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .agents import (
    ConductorContext,
    Diagnosis,
    HardwareSpec,
    classify_bottlenecks,
    compare_with_best,
    conduct,
    generate,
    refine,
)
from .compendium import Compendium, lookup
from .errors import (
    NoCodeFoundError,
    ResumeError,
    TaskInfrastructureError,
)
from .harness import CandidateKernel, TaskSpec, VerificationOutcome, substitute_argv
from .harness import verify as harness_verify
from .llm import LlmClient, TranscriptWriter
from .metrics import (
    DEFAULT_TIMED_RUNS,
    DEFAULT_WARMUP_RUNS,
    ProfileReport,
    default_metric_set,
    merge_metric_requests,
    speedup,
)
from .profilers import ProfileRequest, ProfilerAdapter, collect

log = logging.getLogger(__name__)

RESULT_FILE = "task_result.json"
RECORD_FILE = "record.json"

NO_CODE_LOG = "coder produced no extractable code block"


@dataclass(frozen=True)
class IterationRecord:
    """Everything one attempt produced."""

    iteration: int
    candidate: CandidateKernel
    verification: VerificationOutcome
    profile: ProfileReport | None = None
    diagnosis: Diagnosis | None = None
    promoted_to_best: bool = False

    def __post_init__(self):
        if self.profile is not None and self.verification.status != "correct":
            raise ValueError("profile present for a failed verification")
        if self.promoted_to_best:
            if self.diagnosis is None or self.diagnosis.verdict not in (
                "improvement",
                "first_measurement",
            ):
                raise ValueError("promotion requires an improvement/first_measurement verdict")

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "candidate": self.candidate.to_dict(),
            "verification": self.verification.to_dict(),
            "profile": self.profile.to_dict() if self.profile else None,
            "diagnosis": self.diagnosis.to_dict() if self.diagnosis else None,
            "promoted_to_best": self.promoted_to_best,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IterationRecord":
        return cls(
            iteration=d["iteration"],
            candidate=CandidateKernel.from_dict(d["candidate"]),
            verification=VerificationOutcome.from_dict(d["verification"]),
            profile=ProfileReport.from_dict(d["profile"]) if d.get("profile") else None,
            diagnosis=Diagnosis.from_dict(d["diagnosis"]) if d.get("diagnosis") else None,
            promoted_to_best=d.get("promoted_to_best", False),
        )


@dataclass(frozen=True)
class BestRecord:
    """The historically best correct candidate and the evidence behind it."""

    candidate: CandidateKernel
    verification: VerificationOutcome
    profile: ProfileReport | None
    speedup: float
    achieved_at_iteration: int

    def __post_init__(self):
        if self.verification.status != "correct" or self.verification.timing is None:
            raise ValueError("best record requires a correct, timed verification")
        measured = self.verification.timing.speedup()
        if abs(measured - self.speedup) > 1e-12 * max(1.0, abs(measured)):
            raise ValueError(f"stored speedup {self.speedup} != measured {measured}")

    def to_dict(self) -> dict:
        return {
            "candidate": self.candidate.to_dict(),
            "verification": self.verification.to_dict(),
            "profile": self.profile.to_dict() if self.profile else None,
            "speedup": self.speedup,
            "achieved_at_iteration": self.achieved_at_iteration,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BestRecord":
        return cls(
            candidate=CandidateKernel.from_dict(d["candidate"]),
            verification=VerificationOutcome.from_dict(d["verification"]),
            profile=ProfileReport.from_dict(d["profile"]) if d.get("profile") else None,
            speedup=d["speedup"],
            achieved_at_iteration=d["achieved_at_iteration"],
        )


@dataclass
class TaskResult:
    task_id: str
    records: list[IterationRecord]
    best: BestRecord | None
    success: bool
    attempts_used: int
    category: str = "other"
    infrastructure_error: str | None = None

    def __post_init__(self):
        if self.success != (self.best is not None):
            raise ValueError("success must mirror best-record presence")

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "category": self.category,
            "records": [r.to_dict() for r in self.records],
            "best": self.best.to_dict() if self.best else None,
            "success": self.success,
            "attempts_used": self.attempts_used,
            "infrastructure_error": self.infrastructure_error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskResult":
        return cls(
            task_id=d["task_id"],
            records=[IterationRecord.from_dict(r) for r in d["records"]],
            best=BestRecord.from_dict(d["best"]) if d.get("best") else None,
            success=d["success"],
            attempts_used=d["attempts_used"],
            category=d.get("category", "other"),
            infrastructure_error=d.get("infrastructure_error"),
        )


@dataclass
class TaskDeps:
    """Everything the loop needs, injectable so tests can script any trajectory."""

    llm: LlmClient
    hw: HardwareSpec
    profiler: ProfilerAdapter
    compendium: Compendium | None = None
    transcript: TranscriptWriter | None = None
    verifier: Callable[[TaskSpec, CandidateKernel, Path], VerificationOutcome] | None = None
    warmup: int = DEFAULT_WARMUP_RUNS
    reps: int = DEFAULT_TIMED_RUNS
    doc_top_k: int = 6
    diagnosis_retries: int = 2

    def verify(self, task: TaskSpec, candidate: CandidateKernel, workdir: Path) -> VerificationOutcome:
        if self.verifier is not None:
            return self.verifier(task, candidate, workdir)
        return harness_verify(task, candidate, workdir, warmup=self.warmup, reps=self.reps)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _write_json(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    tmp.replace(path)


def _task_dir(state_dir: Path | str, task_id: str) -> Path:
    return Path(state_dir) / task_id


def persist_record(task_dir: Path, record: IterationRecord) -> None:
    iter_dir = task_dir / f"iter{record.iteration}"
    iter_dir.mkdir(parents=True, exist_ok=True)
    _write_json(iter_dir / RECORD_FILE, record.to_dict())


def persist_result(task_dir: Path, result: TaskResult) -> None:
    task_dir.mkdir(parents=True, exist_ok=True)
    _write_json(task_dir / RESULT_FILE, result.to_dict())


def load_result(task_dir: Path) -> TaskResult | None:
    path = task_dir / RESULT_FILE
    if not path.exists():
        return None
    try:
        return TaskResult.from_dict(json.loads(path.read_text()))
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise ResumeError(f"corrupt task result at {path}: {e}") from e


def load_records(task_dir: Path) -> list[IterationRecord]:
    """Persisted iteration records in order; fails naming the first bad one."""
    records: list[IterationRecord] = []
    i = 0
    while True:
        path = task_dir / f"iter{i}" / RECORD_FILE
        if not path.exists():
            break
        try:
            records.append(IterationRecord.from_dict(json.loads(path.read_text())))
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise ResumeError(f"corrupt record for iteration {i}: {e}", iteration=i) from e
        i += 1
    return records


def reconstruct_best(records: list[IterationRecord]) -> BestRecord | None:
    """Fold the strict-improvement rule over persisted records."""
    best: BestRecord | None = None
    for rec in records:
        if rec.verification.status != "correct" or rec.verification.timing is None:
            continue
        s = rec.verification.timing.speedup()
        if best is None or s > best.speedup:
            best = BestRecord(
                candidate=rec.candidate,
                verification=rec.verification,
                profile=rec.profile,
                speedup=s,
                achieved_at_iteration=rec.iteration,
            )
    return best


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------

def _profile_candidate(
    deps: TaskDeps, task: TaskSpec, iteration: int, metrics: list[str], workdir: Path
) -> ProfileReport | None:
    cfg = task.candidate_runner_template
    command = substitute_argv(
        cfg.argv,
        {
            "mode": "produce",
            "source_path": "candidate.src",
            "output_path": "out.kstn",
            "timing_path": "times.txt",
            "warmup": deps.warmup,
            "reps": deps.reps,
            "task_dir": task.base_dir,
        },
    )
    request = ProfileRequest(
        command=tuple(command),
        metrics=tuple(metrics),
        timeout_s=cfg.timeout_s,
        workdir=workdir,
    )
    try:
        return collect(deps.profiler, request)
    except Exception as e:
        log.warning("profiling failed for %s iter%d, continuing without a profile: %s",
                    task.task_id, iteration, e)
        return None


def _docs_for(deps: TaskDeps, labels, backend: str):
    if deps.compendium is None:
        return []
    if labels:
        terms = []
        for label in labels:
            terms.append(label.label.replace("_", " "))
            terms.extend(m for m, _, _ in label.evidence)
        query = " ".join(terms)
    else:
        query = " ".join(default_metric_set(backend))
    return lookup(deps.compendium, query, deps.doc_top_k)


def _run_loop(
    task: TaskSpec,
    deps: TaskDeps,
    state_dir: Path | str,
    records: list[IterationRecord],
    best: BestRecord | None,
    *,
    target_speedup: float | None = None,
    on_record: Callable[[IterationRecord], None] | None = None,
) -> TaskResult:
    task_dir = _task_dir(state_dir, task.task_id)
    task_dir.mkdir(parents=True, exist_ok=True)

    prev_diag: Diagnosis | None = records[-1].diagnosis if records else None
    prev_candidate: CandidateKernel | None = None
    for rec in reversed(records):
        if rec.candidate.source:
            prev_candidate = rec.candidate
            break

    infrastructure_error: str | None = None
    defaults = default_metric_set(task.backend)

    for i in range(len(records), task.max_attempts):
        iter_dir = task_dir / f"iter{i}"
        iter_dir.mkdir(parents=True, exist_ok=True)

        # (a) candidate: first real attempt generates, later ones refine.
        try:
            if prev_candidate is None or prev_diag is None:
                candidate = generate(task, deps.hw, deps.llm,
                                     transcript=deps.transcript, iteration=i)
            else:
                candidate = refine(task, prev_candidate, prev_diag, best, deps.llm,
                                   transcript=deps.transcript, iteration=i)
            no_code = False
        except NoCodeFoundError:
            candidate = CandidateKernel(source="", iteration=i, language=task.language)
            no_code = True

        # (b) verify; reference-side breakage aborts the task, not the attempt.
        if no_code:
            outcome = VerificationOutcome(status="build_error", logs=NO_CODE_LOG)
        else:
            try:
                outcome = deps.verify(task, candidate, iter_dir)
            except TaskInfrastructureError as e:
                infrastructure_error = str(e)
                log.error("task %s infrastructure failure: %s", task.task_id, e)
                break

        profile = None
        promoted = False
        if outcome.status == "correct":
            # (d) profile with defaults plus whatever the conductor asked for.
            extra = list(prev_diag.extra_metrics) if prev_diag else []
            metrics = merge_metric_requests(defaults, extra)
            profile = _profile_candidate(deps, task, i, metrics, iter_dir)
            current_speedup = outcome.timing.speedup()
            verdict = compare_with_best(current_speedup, best.speedup if best else None)
            labels = (
                classify_bottlenecks(profile, deps.hw, category=task.category)
                if profile is not None
                else []
            )
            docs = _docs_for(deps, labels, task.backend)
            ctx = ConductorContext(
                current_code=candidate.source,
                verifier_feedback=outcome,
                hardware_spec=deps.hw,
                metric_docs=docs,
                current_profile=profile,
                best_record=best,  # pre-promotion: the diagnosis compares against it
                category=task.category,
                round=i,
            )
            diagnosis = conduct(ctx, deps.llm, transcript=deps.transcript,
                                retries=deps.diagnosis_retries)
            if verdict in ("improvement", "first_measurement"):
                best = BestRecord(
                    candidate=candidate,
                    verification=outcome,
                    profile=profile,
                    speedup=current_speedup,
                    achieved_at_iteration=i,
                )
                promoted = True
        else:
            # (c) repair path: forward logs and diagnostics, keep going.
            ctx = ConductorContext(
                current_code=candidate.source,
                verifier_feedback=outcome,
                hardware_spec=deps.hw,
                metric_docs=[],
                current_profile=None,
                best_record=best,
                category=task.category,
                round=i,
            )
            diagnosis = conduct(ctx, deps.llm, transcript=deps.transcript,
                                retries=deps.diagnosis_retries)

        record = IterationRecord(
            iteration=i,
            candidate=candidate,
            verification=outcome,
            profile=profile,
            diagnosis=diagnosis,
            promoted_to_best=promoted,
        )
        persist_record(task_dir, record)  # write-ahead: crash after this resumes cleanly
        records.append(record)
        if candidate.source:
            prev_candidate = candidate
        prev_diag = diagnosis
        if on_record is not None:
            on_record(record)
        if target_speedup is not None and best is not None and best.speedup >= target_speedup:
            log.info("task %s reached target speedup %.3f, stopping early",
                     task.task_id, best.speedup)
            break

    result = TaskResult(
        task_id=task.task_id,
        records=records,
        best=best,
        success=best is not None,
        attempts_used=len(records),
        category=task.category,
        infrastructure_error=infrastructure_error,
    )
    persist_result(task_dir, result)
    return result


def run_task(
    task: TaskSpec,
    deps: TaskDeps,
    state_dir: Path | str,
    *,
    target_speedup: float | None = None,
    on_record: Callable[[IterationRecord], None] | None = None,
) -> TaskResult:
    """Drive one task from scratch through its full attempt budget."""
    task_dir = _task_dir(state_dir, task.task_id)
    if (task_dir / RESULT_FILE).exists() or (task_dir / "iter0" / RECORD_FILE).exists():
        raise ResumeError(
            f"state for task {task.task_id} already exists under {task_dir}; use resume_task"
        )
    return _run_loop(task, deps, state_dir, [], None,
                     target_speedup=target_speedup, on_record=on_record)


def resume_task(
    task: TaskSpec,
    deps: TaskDeps,
    state_dir: Path | str,
    *,
    target_speedup: float | None = None,
    on_record: Callable[[IterationRecord], None] | None = None,
) -> TaskResult:
    """Continue a task from persisted state; a finished task is a no-op."""
    task_dir = _task_dir(state_dir, task.task_id)
    finished = load_result(task_dir)
    if finished is not None:
        return finished
    records = load_records(task_dir)
    best = reconstruct_best(records)
    return _run_loop(task, deps, state_dir, records, best,
                     target_speedup=target_speedup, on_record=on_record)


def run_or_resume(task: TaskSpec, deps: TaskDeps, state_dir: Path | str, **kw) -> TaskResult:
    task_dir = _task_dir(state_dir, task.task_id)
    if (task_dir / RESULT_FILE).exists() or (task_dir / "iter0" / RECORD_FILE).exists():
        return resume_task(task, deps, state_dir, **kw)
    return run_task(task, deps, state_dir, **kw)
