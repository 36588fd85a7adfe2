"""Nsight Compute adapter: wide-format CSV export ingestion.

Targets the basic + occupancy + memory-workload sections; the alias table
(``data/ncu_aliases.json``) maps export columns to metric ids and is the one
place to extend when new sections are wanted. CSV exports are used instead of
binary report files so there is no proprietary-format dependency.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from ..errors import EmptyProfileError, ProfileParseError, UnknownAliasError
from ..metrics import DATA_DIR, ProfileReport, load_catalog
from ..profilers.base import CommandAdapter, ProfileRequest, iteration_from_workdir

_TIME_METRIC = "gpu.kernel_time"

# Per-launch values with these units accumulate across launches; everything
# else is a rate or utilization and gets time-weighted.
_SUMMED_UNITS = {"count", "cycles", "nanoseconds"}

_MISSING_CELLS = {"", "n/a", "nan", "<n/a>"}


def load_ncu_aliases(path: Path | None = None) -> dict[str, str]:
    return json.loads((path or DATA_DIR / "ncu_aliases.json").read_text())


def _cell_to_number(cell: str) -> float | int | None:
    text = cell.strip().strip('"').replace(",", "")
    if text.lower() in _MISSING_CELLS:
        return None
    as_float = float(text)
    as_int = int(as_float)
    return as_int if as_float == as_int and "." not in text and "e" not in text.lower() else as_float


def ncu_parse(
    raw_csv: str,
    requested: list[str],
    *,
    aliases: dict[str, str] | None = None,
    iteration: int = 0,
    raw_artifact: str = "profile.raw",
    default_wall_time_ns: int | None = None,
) -> ProfileReport:
    """Parse an NCU CSV export (header of metric columns, one row per launch).

    Multi-launch aggregation: counters are summed, percent/rate metrics are
    weighted by per-launch kernel time (plain mean when no time column is
    present). A requested metric with no registered column alias is a
    configuration error, not a parse gap.
    """
    aliases = aliases if aliases is not None else load_ncu_aliases()
    metric_for_column = dict(aliases)
    columns_for_metric: dict[str, str] = {m: c for c, m in aliases.items()}

    for metric in requested:
        if metric not in columns_for_metric:
            raise UnknownAliasError(metric)

    if not raw_csv.strip():
        raise ProfileParseError("NCU export is missing its header row")

    reader = csv.DictReader(io.StringIO(raw_csv))
    if not reader.fieldnames:
        raise ProfileParseError("NCU export is missing its header row")
    recognized = [c for c in reader.fieldnames if c in metric_for_column]
    if not recognized:
        raise EmptyProfileError(
            "NCU export contains no recognized metric columns; "
            f"header was: {', '.join(reader.fieldnames)}"
        )

    warnings: list[str] = []
    rows: list[dict[str, float | int]] = []
    for line_no, row in enumerate(reader, start=2):
        parsed_row: dict[str, float | int] = {}
        for column in recognized:
            cell = row.get(column)
            if cell is None:
                continue
            try:
                value = _cell_to_number(cell)
            except ValueError:
                raise ProfileParseError(
                    f"unparseable value in column {column!r}", line_no=line_no, line=cell
                ) from None
            if value is None:
                warnings.append(f"{column}: value not available (row {line_no})")
                continue
            parsed_row[metric_for_column[column]] = value
        if parsed_row:
            rows.append(parsed_row)

    if not rows:
        raise EmptyProfileError("NCU export contained a header but no data rows")

    catalog = load_catalog()
    launch_times = [r.get(_TIME_METRIC) for r in rows]
    have_times = all(t is not None and t > 0 for t in launch_times)
    total_time = sum(t for t in launch_times if t) if have_times else 0

    values: dict[str, float | int] = {}
    for metric in requested:
        present = [(r[metric], r.get(_TIME_METRIC)) for r in rows if metric in r]
        if not present:
            warnings.append(
                f"{metric}: column {columns_for_metric[metric]!r} absent from export"
            )
            continue
        if len(present) == 1:
            values[metric] = present[0][0]
        elif catalog.get(metric).unit in _SUMMED_UNITS:
            values[metric] = sum(v for v, _ in present)
        elif have_times and total_time > 0:
            values[metric] = sum(v * t for v, t in present) / total_time
        else:
            values[metric] = sum(v for v, _ in present) / len(present)
            warnings.append(f"{metric}: no launch times, fell back to plain mean")

    if not values:
        raise EmptyProfileError(
            f"NCU export contained none of the requested metrics: {', '.join(requested)}"
        )

    wall = values.get(_TIME_METRIC)
    return ProfileReport(
        backend="gpu",
        values=values,
        iteration=iteration,
        raw_artifact=raw_artifact,
        wall_time_ns=int(wall) if wall else (default_wall_time_ns or 1),
        warnings=tuple(warnings),
    )


class NcuAdapter(CommandAdapter):
    name = "ncu"
    backend = "gpu"

    def __init__(self, ncu_argv: list[str] | None = None, aliases_path: Path | None = None):
        self.ncu_argv = list(ncu_argv) if ncu_argv is not None else ["ncu", "--csv"]
        self.aliases = load_ncu_aliases(aliases_path)

    @property
    def capabilities(self) -> frozenset[str]:
        return frozenset(self.aliases.values())

    def build_command(self, request: ProfileRequest, raw_path: Path) -> list[str]:
        if not self.ncu_argv:
            return list(request.command)
        return [*self.ncu_argv, "--log-file", str(raw_path), "--", *request.command]

    def parse(self, raw_text: str, request: ProfileRequest, wall_time_ns: int) -> ProfileReport:
        return ncu_parse(
            raw_text,
            list(request.metrics),
            aliases=self.aliases,
            iteration=iteration_from_workdir(request.workdir),
            default_wall_time_ns=wall_time_ns,
        )
