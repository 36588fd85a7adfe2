"""Scripted loop dependencies for state-machine tests: deterministic verifier
outcomes keyed by iteration, a canned profiler, and an LLM answering every tag."""

from __future__ import annotations

import json
from pathlib import Path

from kernopt.agents import HardwareSpec
from kernopt.harness import RunnerConfig, TaskSpec, VerificationOutcome
from kernopt.llm import ScriptedClient
from kernopt.metrics import TimingResult, load_catalog
from kernopt.orchestrator import TaskDeps
from kernopt.profilers import ProfilerAdapter
from kernopt.profilers.base import iteration_from_workdir

CPU_HW = HardwareSpec(backend="cpu", core_or_sm_count=8)

CODE_RESPONSE = "```python\ndef compute(xs):\n    return [x + 1.0 for x in xs]\n```"

# One response that serves coder tags (last fence wins) and parses as a
# diagnosis for conductor tags.
UNIVERSAL_RESPONSE = (
    "```json\n"
    + json.dumps({"hints": ["keep refining"], "extra_metrics": [], "rationale": "scripted"})
    + "\n```"
)


def correct_outcome(speedup: float) -> VerificationOutcome:
    timing = TimingResult(
        t_reference_ns=speedup * 1_000_000.0,
        t_candidate_ns=1_000_000.0,
        warmup_runs=5,
        timed_runs=100,
    )
    return VerificationOutcome(status="correct", logs="", max_abs_err=0.0,
                               max_rel_err=0.0, timing=timing)


def failed_outcome(status: str = "runtime_error", detail: str = "scripted failure") -> VerificationOutcome:
    return VerificationOutcome(status=status, logs=detail)


def scripted_verifier(outcomes: list[VerificationOutcome]):
    """Outcome for attempt i comes from outcomes[i]; deterministic under resume."""

    def verify(task: TaskSpec, candidate, workdir: Path) -> VerificationOutcome:
        i = iteration_from_workdir(Path(workdir))
        return outcomes[i]

    return verify


class StubProfiler(ProfilerAdapter):
    """Returns a synthetic CPU report per iteration and remembers each request."""

    name = "stub"
    backend = "cpu"

    def __init__(self):
        self.requests = []

    @property
    def capabilities(self):
        cat = load_catalog()
        return frozenset(n for n in cat.names() if n.startswith("cpu."))

    def collect(self, request):
        from kernopt.metrics import ProfileReport

        self.requests.append(request)
        i = iteration_from_workdir(Path(request.workdir))
        values = {"cpu.instructions_retired": 100000 + i, "cpu.cycles": 200000}
        if "cpu.llc_miss_rate" in request.metrics:
            values["cpu.llc_miss_rate"] = 12.5
        return ProfileReport(backend="cpu", values=values, iteration=i,
                             raw_artifact="profile.raw", wall_time_ns=1_000_000)


def scripted_llm(**kwargs) -> ScriptedClient:
    kwargs.setdefault("default", UNIVERSAL_RESPONSE)
    return ScriptedClient(**kwargs)


def make_task(task_id="scripted-task", max_attempts=15, category="other") -> TaskSpec:
    runner = RunnerConfig(argv=("unused", "{mode}"))
    return TaskSpec(
        task_id=task_id,
        category=category,
        backend="cpu",
        description="scripted task used by state-machine tests",
        runner=runner,
        candidate_runner_template=runner,
        max_attempts=max_attempts,
        language="python",
    )


def make_deps(outcomes, llm=None, profiler=None, transcript=None) -> TaskDeps:
    return TaskDeps(
        llm=llm or scripted_llm(),
        hw=CPU_HW,
        profiler=profiler or StubProfiler(),
        compendium=None,
        transcript=transcript,
        verifier=scripted_verifier(outcomes),
    )
