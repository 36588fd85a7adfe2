"""Unified metric schema, per-backend default metric subsets, and profile arithmetic.

Everything downstream (profiler adapters, the conductor's reasoning, suite
evaluation) speaks in terms of the catalog defined here. All types are
immutable values after construction and safe to share across workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    BackendMismatchError,
    CatalogError,
    InvalidTimingError,
    UnknownMetricError,
)

DATA_DIR = Path(__file__).parent / "data"

# Timing protocol: unmeasured warmup runs followed by measured repetitions.
DEFAULT_WARMUP_RUNS = 5
DEFAULT_TIMED_RUNS = 100

BACKENDS = ("cpu", "gpu")
UNITS = ("ratio", "percent", "count", "bytes_per_sec", "nanoseconds", "cycles", "dimensionless")
DIRECTIONS = ("higher_better", "lower_better", "neutral")

# Top-down level-1 slots; when all four are present they must account for
# (roughly) all pipeline slots. Band is loose to absorb profiler rounding.
TOPDOWN_METRICS = ("cpu.frontend_bound", "cpu.backend_bound", "cpu.bad_speculation", "cpu.retiring")
TOPDOWN_SUM_BAND = (99.0, 101.0)


@dataclass(frozen=True)
class MetricId:
    """Stable identifier of one metric: lowercase dotted name plus owning backend."""

    name: str
    backend: str  # cpu | gpu | any

    def __post_init__(self):
        if not self.name:
            raise CatalogError("metric name must be non-empty")
        if any(c.isspace() for c in self.name):
            raise CatalogError(f"metric name contains whitespace: {self.name!r}")
        if self.name != self.name.lower():
            raise CatalogError(f"metric name must be lowercase: {self.name!r}")
        if self.backend not in ("cpu", "gpu", "any"):
            raise CatalogError(f"bad metric backend {self.backend!r} for {self.name!r}")


@dataclass(frozen=True)
class MetricDescriptor:
    """Catalog entry: identity, unit, preferred direction, and semantics."""

    id: MetricId
    unit: str
    direction: str
    default_set: bool
    doc: str

    def __post_init__(self):
        if self.unit not in UNITS:
            raise CatalogError(f"bad unit {self.unit!r} for {self.id.name}")
        if self.direction not in DIRECTIONS:
            raise CatalogError(f"bad direction {self.direction!r} for {self.id.name}")
        if self.default_set and self.id.backend not in BACKENDS:
            raise CatalogError(
                f"default-set metric {self.id.name} must belong to exactly one backend"
            )

    def validate_value(self, value: float) -> None:
        if not math.isfinite(value):
            raise CatalogError(f"{self.id.name}: non-finite value {value!r}")
        if self.unit == "percent" and not (0.0 <= value <= 100.0):
            raise CatalogError(f"{self.id.name}: percent value {value} outside [0, 100]")
        if self.unit == "ratio" and value < 0.0:
            raise CatalogError(f"{self.id.name}: ratio value {value} is negative")


class MetricCatalog:
    """Ordered collection of metric descriptors with unique names."""

    def __init__(self, descriptors: list[MetricDescriptor]):
        self._by_name: dict[str, MetricDescriptor] = {}
        for d in descriptors:
            if d.id.name in self._by_name:
                raise CatalogError(f"duplicate metric name: {d.id.name}")
            self._by_name[d.id.name] = d

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __len__(self) -> int:
        return len(self._by_name)

    def get(self, name: str) -> MetricDescriptor:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownMetricError(name) from None

    def names(self) -> list[str]:
        return list(self._by_name)

    def defaults(self, backend: str) -> list[str]:
        """Default metric subset for one backend, in catalog order."""
        if backend not in BACKENDS:
            raise UnknownMetricError(backend, f"unknown backend: {backend!r}")
        return [n for n, d in self._by_name.items() if d.default_set and d.id.backend == backend]

    @classmethod
    def from_json(cls, path: Path) -> "MetricCatalog":
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, list):
            raise CatalogError(f"catalog file {path} must be a JSON array")
        descriptors = [
            MetricDescriptor(
                id=MetricId(name=e["name"], backend=e["backend"]),
                unit=e["unit"],
                direction=e["direction"],
                default_set=bool(e["default_set"]),
                doc=e.get("doc", ""),
            )
            for e in raw
        ]
        return cls(descriptors)


_CATALOG: MetricCatalog | None = None


def load_catalog(path: Path | None = None) -> MetricCatalog:
    """Load the shipped catalog (cached) or a caller-supplied one (not cached)."""
    global _CATALOG
    if path is not None:
        return MetricCatalog.from_json(path)
    if _CATALOG is None:
        _CATALOG = MetricCatalog.from_json(DATA_DIR / "catalog.json")
    return _CATALOG


def default_metric_set(backend: str, catalog: MetricCatalog | None = None) -> list[str]:
    """Ordered default metric ids collected on every profiling run for a backend."""
    return (catalog or load_catalog()).defaults(backend)


def merge_metric_requests(
    defaults: list[str],
    extra: list[str],
    catalog: MetricCatalog | None = None,
) -> list[str]:
    """Order-preserving union of the default set and dynamically requested extras.

    Defaults come first; duplicates are dropped. Every extra must exist in the
    catalog, otherwise the request is rejected naming the offending id.
    """
    cat = catalog or load_catalog()
    merged: list[str] = []
    seen: set[str] = set()
    for name in defaults:
        if name not in seen:
            merged.append(name)
            seen.add(name)
    for name in extra:
        if name not in cat:
            raise UnknownMetricError(name)
        if name not in seen:
            merged.append(name)
            seen.add(name)
    return merged


@dataclass(frozen=True)
class TimingResult:
    """Paired reference/candidate timing aggregates from one measurement phase.

    Aggregates are medians over the timed repetitions (robust to scheduler
    noise); means are kept alongside for report parity.
    """

    t_reference_ns: float
    t_candidate_ns: float
    warmup_runs: int = DEFAULT_WARMUP_RUNS
    timed_runs: int = DEFAULT_TIMED_RUNS
    per_run_samples: tuple[float, ...] | None = None
    t_reference_mean_ns: float | None = None
    t_candidate_mean_ns: float | None = None

    def __post_init__(self):
        if not (self.t_reference_ns > 0 and math.isfinite(self.t_reference_ns)):
            raise InvalidTimingError(f"reference time must be positive, got {self.t_reference_ns}")
        if not (self.t_candidate_ns > 0 and math.isfinite(self.t_candidate_ns)):
            raise InvalidTimingError(f"candidate time must be positive, got {self.t_candidate_ns}")
        if self.warmup_runs < 0 or self.timed_runs < 1:
            raise InvalidTimingError("warmup_runs must be >= 0 and timed_runs >= 1")

    def speedup(self) -> float:
        return speedup(self.t_reference_ns, self.t_candidate_ns)

    def to_dict(self) -> dict:
        return {
            "t_reference_ns": self.t_reference_ns,
            "t_candidate_ns": self.t_candidate_ns,
            "warmup_runs": self.warmup_runs,
            "timed_runs": self.timed_runs,
            "per_run_samples": list(self.per_run_samples) if self.per_run_samples is not None else None,
            "t_reference_mean_ns": self.t_reference_mean_ns,
            "t_candidate_mean_ns": self.t_candidate_mean_ns,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TimingResult":
        samples = d.get("per_run_samples")
        return cls(
            t_reference_ns=d["t_reference_ns"],
            t_candidate_ns=d["t_candidate_ns"],
            warmup_runs=d.get("warmup_runs", DEFAULT_WARMUP_RUNS),
            timed_runs=d.get("timed_runs", DEFAULT_TIMED_RUNS),
            per_run_samples=tuple(samples) if samples is not None else None,
            t_reference_mean_ns=d.get("t_reference_mean_ns"),
            t_candidate_mean_ns=d.get("t_candidate_mean_ns"),
        )


def speedup(t_reference_ns: float, t_candidate_ns: float) -> float:
    """Ratio of reference execution time to candidate execution time.

    > 1 means the candidate is faster than the reference.
    """
    if not (t_reference_ns > 0 and math.isfinite(t_reference_ns)):
        raise InvalidTimingError(f"reference time must be positive, got {t_reference_ns}")
    if not (t_candidate_ns > 0 and math.isfinite(t_candidate_ns)):
        raise InvalidTimingError(f"candidate time must be positive, got {t_candidate_ns}")
    return t_reference_ns / t_candidate_ns


@dataclass(frozen=True)
class ProfileReport:
    """Unified metric-id -> value map collected by one profiler run.

    Construction validates every key against the catalog, enforces unit
    ranges, checks the top-down slot budget when all four level-1 fractions
    are present, and derives cpu.ipc from the raw counters when absent.
    """

    backend: str
    values: dict[str, float]
    iteration: int
    raw_artifact: str
    wall_time_ns: int
    warnings: tuple[str, ...] = ()
    _catalog: MetricCatalog | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise CatalogError(f"bad report backend {self.backend!r}")
        if self.iteration < 0:
            raise CatalogError(f"iteration must be >= 0, got {self.iteration}")
        if not self.wall_time_ns > 0:
            raise CatalogError(f"wall_time_ns must be positive, got {self.wall_time_ns}")
        cat = self._catalog or load_catalog()
        values = dict(self.values)
        if (
            self.backend == "cpu"
            and "cpu.ipc" not in values
            and values.get("cpu.cycles", 0)
            and "cpu.instructions_retired" in values
        ):
            values["cpu.ipc"] = values["cpu.instructions_retired"] / values["cpu.cycles"]
        for name, value in values.items():
            desc = cat.get(name)
            if desc.id.backend not in (self.backend, "any"):
                raise BackendMismatchError(
                    f"metric {name} belongs to {desc.id.backend}, report is {self.backend}"
                )
            desc.validate_value(value)
        if all(m in values for m in TOPDOWN_METRICS):
            total = sum(values[m] for m in TOPDOWN_METRICS)
            lo, hi = TOPDOWN_SUM_BAND
            if not (lo <= total <= hi):
                raise CatalogError(
                    f"top-down fractions sum to {total:.2f}%, outside [{lo}, {hi}]"
                )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "warnings", tuple(self.warnings))
        object.__setattr__(self, "_catalog", None)

    def get(self, name: str, default: float | None = None) -> float | None:
        return self.values.get(name, default)

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "values": dict(self.values),
            "iteration": self.iteration,
            "raw_artifact": self.raw_artifact,
            "wall_time_ns": self.wall_time_ns,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileReport":
        return cls(
            backend=d["backend"],
            values=dict(d["values"]),
            iteration=d["iteration"],
            raw_artifact=d["raw_artifact"],
            wall_time_ns=d["wall_time_ns"],
            warnings=tuple(d.get("warnings", ())),
        )


@dataclass(frozen=True)
class MetricDelta:
    """Signed difference for one metric between a current and a baseline report.

    `side` marks one-sided entries: the metric was collected for only one of
    the two reports, so no delta exists.
    """

    delta: float | None
    current: float | None
    baseline: float | None
    side: str | None = None  # None | "current_only" | "baseline_only"


def profile_delta(current: ProfileReport, baseline: ProfileReport) -> dict[str, MetricDelta]:
    """Per-metric difference current - baseline between two same-backend reports."""
    if current.backend != baseline.backend:
        raise BackendMismatchError(
            f"cannot diff {current.backend} report against {baseline.backend} report"
        )
    out: dict[str, MetricDelta] = {}
    for name in sorted(set(current.values) | set(baseline.values)):
        cur = current.values.get(name)
        base = baseline.values.get(name)
        if cur is not None and base is not None:
            out[name] = MetricDelta(delta=cur - base, current=cur, baseline=base)
        elif cur is not None:
            out[name] = MetricDelta(delta=None, current=cur, baseline=None, side="current_only")
        else:
            out[name] = MetricDelta(delta=None, current=None, baseline=base, side="baseline_only")
    return out
