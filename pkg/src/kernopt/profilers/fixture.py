"""Replay adapter: serves stored profiler output instead of running anything.

Default in tests and the only way to exercise the GPU path without a GPU.
Fixture lookup is keyed on the artifact directory convention
(``<task-id>/iter<N>``), so replays stay deterministic across resumes.
"""

from __future__ import annotations

import shutil
from pathlib import Path

from ..errors import ProfilerFailureError
from ..metrics import ProfileReport, load_catalog
from .base import RAW_ARTIFACT_NAME, ProfileRequest, ProfilerAdapter, iteration_from_workdir
from .ncu import ncu_parse
from .perf import perf_parse


class FixtureAdapter(ProfilerAdapter):
    name = "fixture"

    def __init__(self, root: Path | str, backend: str = "cpu"):
        self.root = Path(root)
        self.backend = backend

    @property
    def capabilities(self) -> frozenset[str]:
        cat = load_catalog()
        return frozenset(n for n in cat.names() if cat.get(n).id.backend == self.backend)

    def _locate(self, request: ProfileRequest) -> Path:
        workdir = Path(request.workdir)
        iteration = iteration_from_workdir(workdir)
        task_id = workdir.parent.name
        stems = [
            self.root / task_id / f"iter{iteration}",
            self.root / f"iter{iteration}",
            self.root / "default",
        ]
        for stem in stems:
            for candidate in sorted(stem.parent.glob(stem.name + ".*")):
                return candidate
            if stem.exists():
                return stem
        raise ProfilerFailureError(
            f"no fixture for task {task_id!r} iteration {iteration} under {self.root}"
        )

    def collect(self, request: ProfileRequest) -> ProfileReport:
        source = self._locate(request)
        request.workdir.mkdir(parents=True, exist_ok=True)
        raw_path = request.workdir / RAW_ARTIFACT_NAME
        shutil.copyfile(source, raw_path)
        text = raw_path.read_text()
        iteration = iteration_from_workdir(request.workdir)
        if self.backend == "gpu":
            return ncu_parse(text, list(request.metrics), iteration=iteration)
        return perf_parse(text, list(request.metrics), iteration=iteration)
