"""Manifest: which reference operator a task means, and how candidates run."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

CANDIDATE_KINDS = ("cpp_source", "triton_source")


@dataclass(frozen=True)
class ShimManifest:
    task_id: str
    op_name: str
    params: dict = field(default_factory=dict)
    candidate_kind: str = "cpp_source"
    extra_cflags: tuple = ()

    def __post_init__(self):
        if self.candidate_kind not in CANDIDATE_KINDS:
            raise ValueError(f"unknown candidate kind {self.candidate_kind!r}")
        shapes = self.params.get("shapes")
        if not shapes:
            raise ValueError("manifest params need input shapes")
        object.__setattr__(self, "extra_cflags", tuple(self.extra_cflags))

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [tuple(s) for s in self.params["shapes"]]

    @property
    def dtype(self) -> str:
        return self.params.get("dtype", "float32")

    @property
    def seed(self) -> int:
        return int(self.params.get("seed", 0))

    @classmethod
    def load(cls, path: Path | str) -> "ShimManifest":
        d = json.loads(Path(path).read_text())
        op = d["op"]
        return cls(
            task_id=d["task_id"],
            op_name=op["name"],
            params=dict(op.get("params", {})),
            candidate_kind=d.get("candidate_kind", "cpp_source"),
            extra_cflags=tuple(d.get("extra_cflags", [])),
        )
