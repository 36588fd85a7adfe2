"""Linux perf adapter: CSV-mode `perf stat` invocation and parsing.

perf is always invoked with ``-x,`` so the output is machine readable and
stable across perf versions. Counter values parse to exact ints; top-down
fractions and other percentages parse to floats on the 0-100 scale, matching
what perf prints.
"""

from __future__ import annotations

from pathlib import Path

from ..errors import EmptyProfileError, ProfileParseError
from ..metrics import ProfileReport
from ..profilers.base import CommandAdapter, ProfileRequest, iteration_from_workdir

# perf event name (modifier suffix stripped) -> metric id
PERF_EVENT_ALIASES = {
    "instructions": "cpu.instructions_retired",
    "cycles": "cpu.cycles",
    "cpu-cycles": "cpu.cycles",
    "topdown-fe-bound": "cpu.frontend_bound",
    "frontend_bound": "cpu.frontend_bound",
    "topdown-be-bound": "cpu.backend_bound",
    "backend_bound": "cpu.backend_bound",
    "topdown-bad-spec": "cpu.bad_speculation",
    "bad_speculation": "cpu.bad_speculation",
    "topdown-retiring": "cpu.retiring",
    "retiring": "cpu.retiring",
    "cache-misses": "cpu.cache_misses",
}

# Raw counter pairs that turn into derived rate metrics (percent).
_RATE_SOURCES = {
    "cpu.llc_miss_rate": ("LLC-load-misses", "LLC-loads"),
    "cpu.branch_miss_rate": ("branch-misses", "branches"),
}

_SKIP_VALUES = ("<not supported>", "<not counted>")

# Events perf must be asked for so a requested metric can be recovered.
_EVENTS_FOR_METRIC = {metric: [event] for event, metric in PERF_EVENT_ALIASES.items()}
for _metric, (_num, _den) in _RATE_SOURCES.items():
    _EVENTS_FOR_METRIC[_metric] = [_num, _den]
_EVENTS_FOR_METRIC["cpu.ipc"] = ["instructions", "cycles"]


def _parse_number(text: str) -> float | int:
    text = text.strip().replace(",", "")
    if text.endswith("%"):
        text = text[:-1]
    as_float = float(text)
    as_int = int(as_float)
    return as_int if as_float == as_int and "." not in text and "e" not in text.lower() else as_float


def perf_parse(
    raw_text: str,
    requested: list[str],
    *,
    iteration: int = 0,
    raw_artifact: str = "profile.raw",
    default_wall_time_ns: int | None = None,
) -> ProfileReport:
    """Parse `perf stat -x,` output into a report restricted to the requested ids.

    ``<not supported>`` / ``<not counted>`` counters are dropped and listed in
    the report warnings. Unrecognized events are ignored. A line that is not
    comment, blank, or CSV with a leading value field is a structural error.
    """
    counters: dict[str, float | int] = {}
    warnings: list[str] = []
    wall_time_ns: int | None = None
    recovered_any = False

    for line_no, line in enumerate(raw_text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split(",")
        if len(fields) < 3:
            raise ProfileParseError("not a perf CSV record", line_no=line_no, line=line)
        value_field, _unit, event = fields[0].strip(), fields[1].strip(), fields[2].strip()
        if value_field in _SKIP_VALUES:
            warnings.append(f"{event}: {value_field}")
            continue
        try:
            value = _parse_number(value_field)
        except ValueError:
            raise ProfileParseError("unparseable counter value", line_no=line_no, line=line) from None
        event_base = event.split(":")[0]
        if event_base == "duration_time":
            wall_time_ns = int(value)
            continue
        counters[event_base] = value
        recovered_any = True

    parsed: dict[str, float | int] = {}
    for event_base, value in counters.items():
        metric = PERF_EVENT_ALIASES.get(event_base)
        if metric is not None:
            parsed[metric] = value
    for metric, (num_event, den_event) in _RATE_SOURCES.items():
        num, den = counters.get(num_event), counters.get(den_event)
        if num is not None and den:
            parsed[metric] = 100.0 * num / den
    values = {m: v for m, v in parsed.items() if m in requested}
    # cpu.ipc derives from the raw counters at report construction; make the
    # raws available when ipc itself was asked for.
    if "cpu.ipc" in requested:
        for raw_metric in ("cpu.instructions_retired", "cpu.cycles"):
            if raw_metric in parsed:
                values.setdefault(raw_metric, parsed[raw_metric])
    if not values:
        if not recovered_any:
            raise EmptyProfileError("no counters recovered from perf output")
        raise EmptyProfileError(
            f"perf output contained none of the requested metrics: {', '.join(requested)}"
        )

    return ProfileReport(
        backend="cpu",
        values=values,
        iteration=iteration,
        raw_artifact=raw_artifact,
        wall_time_ns=wall_time_ns or default_wall_time_ns or 1,
        warnings=tuple(warnings),
    )


class PerfAdapter(CommandAdapter):
    name = "perf"
    backend = "cpu"

    def __init__(self, perf_argv: list[str] | None = None):
        self.perf_argv = list(perf_argv) if perf_argv is not None else ["perf", "stat", "-x,"]

    @property
    def capabilities(self) -> frozenset[str]:
        return frozenset(_EVENTS_FOR_METRIC)

    def events_for(self, metrics: tuple[str, ...]) -> list[str]:
        events: list[str] = []
        for metric in metrics:
            for event in _EVENTS_FOR_METRIC.get(metric, ()):
                if event not in events:
                    events.append(event)
        if "duration_time" not in events:
            events.append("duration_time")
        return events

    def build_command(self, request: ProfileRequest, raw_path: Path) -> list[str]:
        if not self.perf_argv:
            return list(request.command)
        events = self.events_for(request.metrics)
        return [
            *self.perf_argv,
            "-e", ",".join(events),
            "-o", str(raw_path),
            "--",
            *request.command,
        ]

    def parse(self, raw_text: str, request: ProfileRequest, wall_time_ns: int) -> ProfileReport:
        return perf_parse(
            raw_text,
            list(request.metrics),
            iteration=iteration_from_workdir(request.workdir),
            default_wall_time_ns=wall_time_ns,
        )
