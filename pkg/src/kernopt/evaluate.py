"""Suite-level evaluation: success rate, speedup aggregates, fast-kernel rate.

The headline speedup aggregate is the geometric mean over successful tasks
(the right mean for ratio data); the arithmetic mean is always emitted next to
it so no reader has to guess which one a number is.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .harness import CATEGORIES
from .orchestrator import RESULT_FILE, TaskResult, load_result


@dataclass(frozen=True)
class TaskRow:
    task_id: str
    category: str
    success: bool
    best_speedup: float | None

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "category": self.category,
            "success": self.success,
            "best_speedup": self.best_speedup,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskRow":
        return cls(d["task_id"], d["category"], d["success"], d.get("best_speedup"))


@dataclass(frozen=True)
class GroupStats:
    n_tasks: int
    success_rate: float
    fast1_rate: float
    mean_speedup: float | None      # geometric, successes only
    arith_mean_speedup: float | None

    def to_dict(self) -> dict:
        return {
            "n_tasks": self.n_tasks,
            "success_rate": self.success_rate,
            "fast1_rate": self.fast1_rate,
            "mean_speedup": self.mean_speedup,
            "arith_mean_speedup": self.arith_mean_speedup,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroupStats":
        return cls(d["n_tasks"], d["success_rate"], d["fast1_rate"],
                   d.get("mean_speedup"), d.get("arith_mean_speedup"))


@dataclass
class SuiteReport:
    per_task: list[TaskRow]
    overall: GroupStats
    by_category: dict[str, GroupStats]
    infrastructure_failures: list[str] = field(default_factory=list)
    fast1_inclusive: bool = False

    @property
    def success_rate(self) -> float:
        return self.overall.success_rate

    @property
    def fast1_rate(self) -> float:
        return self.overall.fast1_rate

    @property
    def mean_speedup(self) -> float | None:
        return self.overall.mean_speedup

    def to_dict(self) -> dict:
        return {
            "per_task": [r.to_dict() for r in self.per_task],
            "overall": self.overall.to_dict(),
            "by_category": {c: s.to_dict() for c, s in self.by_category.items()},
            "infrastructure_failures": list(self.infrastructure_failures),
            "fast1_inclusive": self.fast1_inclusive,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteReport":
        return cls(
            per_task=[TaskRow.from_dict(r) for r in d["per_task"]],
            overall=GroupStats.from_dict(d["overall"]),
            by_category={c: GroupStats.from_dict(s) for c, s in d["by_category"].items()},
            infrastructure_failures=list(d.get("infrastructure_failures", [])),
            fast1_inclusive=d.get("fast1_inclusive", False),
        )


def _is_fast(speedup: float | None, inclusive: bool) -> bool:
    if speedup is None:
        return False
    return speedup >= 1.0 if inclusive else speedup > 1.0


def _group_stats(rows: list[TaskRow], inclusive: bool) -> GroupStats:
    n = len(rows)
    successes = [r for r in rows if r.success]
    speedups = [r.best_speedup for r in successes if r.best_speedup is not None]
    fast = [r for r in successes if _is_fast(r.best_speedup, inclusive)]
    geo = math.exp(sum(math.log(s) for s in speedups) / len(speedups)) if speedups else None
    arith = sum(speedups) / len(speedups) if speedups else None
    return GroupStats(
        n_tasks=n,
        success_rate=100.0 * len(successes) / n,
        fast1_rate=100.0 * len(fast) / n,
        mean_speedup=geo,
        arith_mean_speedup=arith,
    )


def evaluate_suite(
    results: list[TaskResult],
    *,
    fast1_inclusive: bool = False,
    include_infrastructure_failures: bool = False,
) -> SuiteReport:
    """Aggregate per-task outcomes into suite metrics.

    Tasks that died on infrastructure (not on the candidate) are excluded from
    every denominator by default and listed separately.
    """
    if not results:
        raise ValueError("evaluate_suite needs at least one task result")
    infra = sorted(r.task_id for r in results if r.infrastructure_error is not None)
    counted = [
        r for r in results
        if include_infrastructure_failures or r.infrastructure_error is None
    ]
    if not counted:
        raise ValueError("every task failed on infrastructure; nothing to evaluate")

    rows = sorted(
        (
            TaskRow(
                task_id=r.task_id,
                category=r.category,
                success=r.success,
                best_speedup=r.best.speedup if r.best else None,
            )
            for r in counted
        ),
        key=lambda row: row.task_id,
    )
    by_category = {
        c: _group_stats(group, fast1_inclusive)
        for c in CATEGORIES
        if (group := [r for r in rows if r.category == c])
    }
    return SuiteReport(
        per_task=rows,
        overall=_group_stats(rows, fast1_inclusive),
        by_category=by_category,
        infrastructure_failures=infra,
        fast1_inclusive=fast1_inclusive,
    )


def load_suite_results(state_dir: Path | str) -> list[TaskResult]:
    """Every finished task_result.json under a state directory."""
    state_dir = Path(state_dir)
    results = []
    for path in sorted(state_dir.glob(f"*/{RESULT_FILE}")):
        loaded = load_result(path.parent)
        if loaded is not None:
            results.append(loaded)
    return results


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _fmt_rate(v: float) -> str:
    return f"{v:.1f}"


def _fmt_speedup(v: float | None) -> str:
    return f"{v:.2f}" if v is not None else "-"


def _table(report: SuiteReport) -> str:
    header = f"{'':<20}{'Success (%)':>14}{'Speedup (x)':>14}{'Fast1 (%)':>12}"
    lines = [header]

    def row(name: str, stats: GroupStats) -> str:
        return (
            f"{name:<20}{_fmt_rate(stats.success_rate):>14}"
            f"{_fmt_speedup(stats.mean_speedup):>14}{_fmt_rate(stats.fast1_rate):>12}"
        )

    lines.append(row("overall", report.overall))
    for category in sorted(report.by_category):
        lines.append(row(category, report.by_category[category]))
    lines.append("")
    lines.append(f"tasks evaluated: {report.overall.n_tasks}")
    if report.overall.arith_mean_speedup is not None:
        lines.append(f"arithmetic mean speedup: {report.overall.arith_mean_speedup:.2f}")
    if report.infrastructure_failures:
        lines.append("infrastructure failures (excluded): "
                      + ", ".join(report.infrastructure_failures))
    return "\n".join(lines) + "\n"


def _csv(report: SuiteReport) -> str:
    lines = ["task_id,category,success,best_speedup"]
    for row in report.per_task:
        speed = "" if row.best_speedup is None else repr(row.best_speedup)
        lines.append(f"{row.task_id},{row.category},{str(row.success).lower()},{speed}")
    return "\n".join(lines) + "\n"


def report_render(report: SuiteReport, format: str = "table") -> str:
    """Deterministic rendering; json output round-trips byte-identically."""
    if format == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    if format == "table":
        return _table(report)
    if format == "csv":
        return _csv(report)
    raise ValueError(f"unknown report format {format!r}")
