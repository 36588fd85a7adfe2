"""Adapter interface and child-process plumbing shared by all profilers."""

from __future__ import annotations

import re
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path

from ..errors import CapabilityError, ProfilerFailureError, ProfileTimeoutError
from ..metrics import ProfileReport

RAW_ARTIFACT_NAME = "profile.raw"

_ITER_RE = re.compile(r"iter(\d+)$")


def iteration_from_workdir(workdir: Path) -> int:
    """Iteration index encoded in the artifact directory name, 0 if absent."""
    m = _ITER_RE.search(Path(workdir).name)
    return int(m.group(1)) if m else 0


@dataclass(frozen=True)
class ProfileRequest:
    """One profiling run: the measured command plus the metrics wanted from it."""

    command: tuple[str, ...]
    metrics: tuple[str, ...]
    timeout_s: float
    workdir: Path

    def __post_init__(self):
        if not self.command:
            raise ValueError("profile request needs a command")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        object.__setattr__(self, "command", tuple(self.command))
        object.__setattr__(self, "metrics", tuple(self.metrics))
        object.__setattr__(self, "workdir", Path(self.workdir))


class ProfilerAdapter:
    """An adapter declares what it can collect and turns raw output into a report.

    Emitting a metric outside ``capabilities`` is a bug; ``collect`` enforces
    the request side before launching anything.
    """

    name = "abstract"
    backend = "cpu"

    @property
    def capabilities(self) -> frozenset[str]:
        raise NotImplementedError

    def collect(self, request: ProfileRequest) -> ProfileReport:
        raise NotImplementedError


class CommandAdapter(ProfilerAdapter):
    """Base for adapters that wrap the runner command in a profiler process.

    Child-process contract: ``<profiler-argv> -- <runner-argv>``. The raw
    profiler output is always written to ``<workdir>/profile.raw`` before
    parsing so failed parses stay debuggable.
    """

    def build_command(self, request: ProfileRequest, raw_path: Path) -> list[str]:
        raise NotImplementedError

    def parse(self, raw_text: str, request: ProfileRequest, wall_time_ns: int) -> ProfileReport:
        raise NotImplementedError

    def collect(self, request: ProfileRequest) -> ProfileReport:
        request.workdir.mkdir(parents=True, exist_ok=True)
        raw_path = request.workdir / RAW_ARTIFACT_NAME
        argv = self.build_command(request, raw_path)
        start = time.perf_counter_ns()
        try:
            proc = subprocess.run(
                argv,
                cwd=request.workdir,
                capture_output=True,
                text=True,
                timeout=request.timeout_s,
            )
        except subprocess.TimeoutExpired:
            raise ProfileTimeoutError(
                f"{self.name} run exceeded {request.timeout_s}s: {' '.join(argv)}"
            ) from None
        elapsed_ns = time.perf_counter_ns() - start
        if proc.returncode != 0:
            raise ProfilerFailureError(
                f"{self.name} exited {proc.returncode}", stderr=proc.stderr
            )
        if not raw_path.exists():
            # Profilers that print to stderr instead of a file still get a raw artifact.
            raw_path.write_text(proc.stderr or proc.stdout)
        return self.parse(raw_path.read_text(), request, wall_time_ns=max(elapsed_ns, 1))


_REGISTRY: dict[str, type] = {}


def register_adapter(name: str, factory: type) -> None:
    _REGISTRY[name] = factory


def get_adapter(name: str, **kwargs) -> ProfilerAdapter:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise CapabilityError(
            f"no profiler adapter named {name!r}; known: {sorted(_REGISTRY)}"
        ) from None
    return factory(**kwargs)


def collect(adapter: ProfilerAdapter, request: ProfileRequest) -> ProfileReport:
    """Capability-checked dispatch to an adapter.

    Refuses before launch when the request names metrics the adapter never
    declared; the orchestrator guarantees the candidate is already verified.
    """
    missing = [m for m in request.metrics if m not in adapter.capabilities]
    if missing:
        raise CapabilityError(
            f"adapter {adapter.name} cannot collect: {', '.join(missing)}"
        )
    return adapter.collect(request)
