"""Offline knowledge base of profiler metric semantics.

Built once, ahead of optimization runs, in two stages: every documentation
segment is summarized into structured entries, then same-metric entries are
merged into a single compendium that conductor prompts can query.

Lookup is deterministic lexical ranking (term frequency with field boosts),
not embeddings, so builds and queries reproduce exactly; the scorer is a
single function and can be swapped for an embedding scorer.
"""

from __future__ import annotations

import hashlib
import html.parser
import json
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CompendiumBuildError, NoCodeFoundError
from .llm import ChatRequest, LlmClient, TranscriptWriter, complete, extract_code
from .metrics import MetricCatalog, default_metric_set, load_catalog

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_CHAR_BUDGET = 4000
DEFAULT_RETRIES = 2

_HEADING_RE = re.compile(r"^#{1,6}[ \t]", re.MULTILINE)


@dataclass(frozen=True)
class DocSegment:
    """One chunk of raw tool documentation, at most the configured char budget."""

    source: str
    tool: str
    text: str
    offset: int

    def __post_init__(self):
        if not self.text:
            raise CompendiumBuildError("segment text must be non-empty")

    @property
    def segment_id(self) -> str:
        h = hashlib.sha256(f"{self.source}\x00{self.offset}".encode())
        return h.hexdigest()[:16]


@dataclass
class MetricKnowledgeEntry:
    """What one metric measures, how it is measured, and what it can reveal."""

    metric: str
    description: str
    mechanism: str = ""
    bottlenecks: list[str] = field(default_factory=list)
    provenance: list[str] = field(default_factory=list)
    conflicting: bool = False

    def validate(self) -> None:
        if not self.metric or not self.description:
            raise ValueError("entry needs a metric name and a description")
        if any(not b for b in self.bottlenecks):
            raise ValueError("bottleneck strings must be non-empty")
        if not self.provenance:
            raise ValueError("entry needs provenance")

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "description": self.description,
            "mechanism": self.mechanism,
            "bottlenecks": list(self.bottlenecks),
            "provenance": list(self.provenance),
            "conflicting": self.conflicting,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricKnowledgeEntry":
        return cls(
            metric=d["metric"],
            description=d["description"],
            mechanism=d.get("mechanism", ""),
            bottlenecks=list(d.get("bottlenecks", [])),
            provenance=list(d.get("provenance", [])),
            conflicting=bool(d.get("conflicting", False)),
        )


@dataclass
class Compendium:
    entries: list[MetricKnowledgeEntry]
    schema_version: int = SCHEMA_VERSION
    built_at: str = ""

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "built_at": self.built_at,
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Compendium":
        return cls(
            entries=[MetricKnowledgeEntry.from_dict(e) for e in d["entries"]],
            schema_version=d.get("schema_version", SCHEMA_VERSION),
            built_at=d.get("built_at", ""),
        )

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "Compendium":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def content_hash(self) -> str:
        """Hash over everything except built_at, for determinism checks."""
        body = json.dumps(
            {"schema_version": self.schema_version, "entries": [e.to_dict() for e in self.entries]},
            sort_keys=True,
        )
        return hashlib.sha256(body.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Stage 0: ingestion
# ---------------------------------------------------------------------------

class _TagStripper(html.parser.HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.chunks: list[str] = []

    def handle_data(self, data):
        self.chunks.append(data)


def _strip_html(text: str) -> str:
    stripper = _TagStripper()
    stripper.feed(text)
    return "".join(stripper.chunks)


def _infer_tool(source: str) -> str:
    lowered = source.lower()
    if "ncu" in lowered or "nsight" in lowered:
        return "ncu"
    if "perf" in lowered:
        return "perf"
    return "generic"


def _read_source(source: str, fetch_timeout_s: float) -> str:
    if source.startswith(("http://", "https://")):
        import requests

        resp = requests.get(source, timeout=fetch_timeout_s)
        resp.raise_for_status()
        text = resp.text
    else:
        text = Path(source).read_text()
    if source.endswith((".html", ".htm")) or text.lstrip()[:1] == "<":
        text = _strip_html(text)
    return text


def split_segments(text: str, source: str, tool: str, char_budget: int) -> list[DocSegment]:
    """Partition text into <= budget segments, breaking on heading boundaries.

    The segments concatenate back to the original text exactly (no gaps, no
    overlaps); oversized blocks are hard-split at the budget.
    """
    if not text:
        return []
    starts = [m.start() for m in _HEADING_RE.finditer(text)]
    if not starts or starts[0] != 0:
        starts = [0] + starts
    blocks = [text[a:b] for a, b in zip(starts, starts[1:] + [len(text)])]

    segments: list[DocSegment] = []
    cursor = 0
    buf = ""

    def flush():
        nonlocal buf, cursor
        if buf:
            segments.append(DocSegment(source=source, tool=tool, text=buf, offset=cursor))
            cursor += len(buf)
            buf = ""

    for block in blocks:
        if buf and len(buf) + len(block) > char_budget:
            flush()
        if len(block) > char_budget:
            flush()
            for i in range(0, len(block), char_budget):
                buf = block[i : i + char_budget]
                flush()
        else:
            buf += block
    flush()
    return segments


def ingest(
    sources: list[str],
    *,
    char_budget: int = DEFAULT_CHAR_BUDGET,
    fetch_timeout_s: float = 10.0,
) -> list[DocSegment]:
    """Read every source (local snapshot or URL) and split it into segments.

    Unreachable sources are logged and skipped so one dead link does not sink
    the build; an entirely empty harvest does.
    """
    segments: list[DocSegment] = []
    for source in sources:
        try:
            text = _read_source(source, fetch_timeout_s)
        except Exception as e:
            log.warning("source %s unreachable, skipping: %s", source, e)
            continue
        got = split_segments(text, source=source, tool=_infer_tool(source), char_budget=char_budget)
        if not got:
            log.warning("source %s produced no segments (empty after extraction)", source)
        segments.extend(got)
    if not segments:
        raise CompendiumBuildError("no documentation segments ingested from any source")
    return segments


def read_sources_file(path: Path | str) -> list[str]:
    """One url-or-path per line; blank lines and # comments allowed.

    Relative paths resolve against the sources file's own directory.
    """
    base = Path(path).parent
    out: list[str] = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith(("http://", "https://")) or Path(line).is_absolute():
            out.append(line)
        else:
            out.append(str(base / line))
    return out


# ---------------------------------------------------------------------------
# Stage 1: per-segment summarization
# ---------------------------------------------------------------------------

_SUMMARIZE_SYSTEM = (
    "You distill profiler documentation. From the given fragment, extract an entry "
    "for every performance metric it defines. Reply with a JSON array of objects "
    '{"metric": str, "description": str, "mechanism": str, "bottlenecks": [str, ...]}. '
    "Reply with an empty array when the fragment defines no metric."
)

_WORD_RE = re.compile(r"[a-z0-9]+")


def _normalize(name: str) -> str:
    return "_".join(_WORD_RE.findall(name.lower()))


def resolve_metric_name(raw: str, tool: str, catalog: MetricCatalog | None = None) -> str:
    """Map a free-form metric mention onto a catalog id when one matches.

    Tries the exact id, then the id's suffix (name after the backend prefix),
    preferring the backend implied by the documenting tool. Unresolvable names
    pass through untouched.
    """
    cat = catalog or load_catalog()
    if raw in cat:
        return raw
    wanted = _normalize(raw)
    preferred_backend = {"perf": "cpu", "ncu": "gpu"}.get(tool)
    matches = []
    for name in cat.names():
        suffix = _normalize(name.split(".", 1)[1])
        if suffix == wanted or _normalize(name) == wanted:
            matches.append(name)
    if not matches:
        return raw
    if preferred_backend:
        for name in matches:
            if name.startswith(preferred_backend + "."):
                return name
    return matches[0]


def _parse_entries_json(text: str) -> list[dict]:
    try:
        body = extract_code(text, "json")
    except NoCodeFoundError:
        raise ValueError("empty response") from None
    data = json.loads(body)
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list) or not all(isinstance(e, dict) for e in data):
        raise ValueError("expected a JSON array of objects")
    return data


def summarize_segment(
    segment: DocSegment,
    llm: LlmClient,
    *,
    retries: int = DEFAULT_RETRIES,
    transcript: TranscriptWriter | None = None,
    catalog: MetricCatalog | None = None,
) -> list[MetricKnowledgeEntry]:
    """Extract structured metric entries from one segment.

    Malformed model output is retried up to `retries` times, then the segment
    is skipped with a logged failure record.
    """
    user = (
        f"Tool: {segment.tool}\n"
        f"Documentation fragment (from {segment.source}):\n\n{segment.text}"
    )
    request = ChatRequest(system_prompt=_SUMMARIZE_SYSTEM, user_prompt=user, tag="compendium")
    last_error: Exception | None = None
    for attempt in range(retries + 1):
        response = complete(llm, request, transcript=transcript)
        try:
            raw_entries = _parse_entries_json(response.text)
            entries = []
            for raw in raw_entries:
                entry = MetricKnowledgeEntry(
                    metric=resolve_metric_name(str(raw["metric"]), segment.tool, catalog),
                    description=str(raw["description"]),
                    mechanism=str(raw.get("mechanism", "")),
                    bottlenecks=[str(b) for b in raw.get("bottlenecks", [])],
                    provenance=[segment.segment_id],
                )
                entry.validate()
                entries.append(entry)
            return entries
        except (ValueError, KeyError, json.JSONDecodeError) as e:
            last_error = e
            log.warning(
                "segment %s: malformed summarizer output (attempt %d/%d): %s",
                segment.segment_id, attempt + 1, retries + 1, e,
            )
    log.error("segment %s: skipped after %d malformed outputs: %s",
              segment.segment_id, retries + 1, last_error)
    return []


# ---------------------------------------------------------------------------
# Stage 2: synthesis
# ---------------------------------------------------------------------------

_MERGE_SYSTEM = (
    "You consolidate metric documentation. MERGE REQUEST: given several entries for "
    "the same metric, union their descriptions without dropping information and "
    'reply with one JSON object {"metric": str, "description": str, "mechanism": str, '
    '"bottlenecks": [str, ...]}.'
)


def _mechanical_merge(metric: str, group: list[MetricKnowledgeEntry]) -> MetricKnowledgeEntry:
    descriptions = list(dict.fromkeys(e.description for e in group))
    mechanisms = list(dict.fromkeys(e.mechanism for e in group if e.mechanism))
    bottlenecks = list(dict.fromkeys(b for e in group for b in e.bottlenecks))
    return MetricKnowledgeEntry(
        metric=metric,
        description=" | ".join(descriptions),
        mechanism=" | ".join(mechanisms),
        bottlenecks=bottlenecks,
        provenance=[p for e in group for p in e.provenance],
        conflicting=len(descriptions) > 1,
    )


def synthesize(
    intermediate: list[MetricKnowledgeEntry],
    llm: LlmClient,
    *,
    backends: tuple[str, ...] = ("cpu", "gpu"),
    retries: int = DEFAULT_RETRIES,
    transcript: TranscriptWriter | None = None,
    catalog: MetricCatalog | None = None,
) -> Compendium:
    """Merge same-metric entries and check default-set coverage.

    Conflicting summaries are kept side by side and flagged rather than
    adjudicated. The build fails listing every default metric that ended up
    with no entry.
    """
    if not intermediate:
        raise CompendiumBuildError("synthesis needs at least one intermediate entry")

    groups: dict[str, list[MetricKnowledgeEntry]] = {}
    for entry in intermediate:
        groups.setdefault(entry.metric, []).append(entry)

    merged: list[MetricKnowledgeEntry] = []
    for metric in sorted(groups):
        group = groups[metric]
        if len(group) == 1:
            merged.append(group[0])
            continue
        fallback = _mechanical_merge(metric, group)
        user = json.dumps([e.to_dict() for e in group], sort_keys=True)
        request = ChatRequest(system_prompt=_MERGE_SYSTEM, user_prompt=user, tag="compendium")
        result = None
        for _ in range(retries + 1):
            response = complete(llm, request, transcript=transcript)
            try:
                raw = _parse_entries_json(response.text)[0]
                result = MetricKnowledgeEntry(
                    metric=metric,
                    description=str(raw["description"]),
                    mechanism=str(raw.get("mechanism", fallback.mechanism)),
                    bottlenecks=[str(b) for b in raw.get("bottlenecks", fallback.bottlenecks)],
                    provenance=fallback.provenance,
                    conflicting=fallback.conflicting,
                )
                result.validate()
                break
            except (ValueError, KeyError, IndexError, json.JSONDecodeError) as e:
                log.warning("merge for %s: malformed output, retrying: %s", metric, e)
        merged.append(result or fallback)

    cat = catalog or load_catalog()
    covered = {e.metric for e in merged}
    missing = [
        m for backend in backends for m in default_metric_set(backend, cat) if m not in covered
    ]
    if missing:
        raise CompendiumBuildError(
            f"compendium does not cover default metrics: {', '.join(missing)}",
            missing=missing,
        )
    return Compendium(entries=merged, built_at=time.strftime("%Y-%m-%dT%H:%M:%S"))


def build_compendium(
    sources: list[str],
    llm: LlmClient,
    *,
    char_budget: int = DEFAULT_CHAR_BUDGET,
    backends: tuple[str, ...] = ("cpu", "gpu"),
    retries: int = DEFAULT_RETRIES,
    transcript: TranscriptWriter | None = None,
    catalog: MetricCatalog | None = None,
) -> Compendium:
    """Full offline build: ingest -> summarize each segment -> synthesize."""
    segments = ingest(sources, char_budget=char_budget)
    intermediate: list[MetricKnowledgeEntry] = []
    for segment in segments:
        intermediate.extend(
            summarize_segment(segment, llm, retries=retries, transcript=transcript, catalog=catalog)
        )
    if not intermediate:
        raise CompendiumBuildError("no metric entries extracted from any segment")
    return synthesize(
        intermediate, llm, backends=backends, retries=retries, transcript=transcript, catalog=catalog
    )


# ---------------------------------------------------------------------------
# Lookup
# ---------------------------------------------------------------------------

_FIELD_BOOSTS = (("metric", 5.0), ("bottlenecks", 3.0), ("description", 1.0), ("mechanism", 1.0))


def _tokens(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def lookup(compendium: Compendium, query: str, k: int = 1) -> list[MetricKnowledgeEntry]:
    """Top-k entries by lexical relevance.

    Term frequency with field boosts (metric name > bottlenecks > prose);
    ties break on lexicographically smaller metric name, so the order is a
    deterministic total order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    terms = _tokens(query)
    if not terms or not compendium.entries:
        return []
    scored: list[tuple[float, str, MetricKnowledgeEntry]] = []
    for entry in compendium.entries:
        fields = {
            "metric": _tokens(entry.metric),
            "bottlenecks": _tokens(" ".join(entry.bottlenecks)),
            "description": _tokens(entry.description),
            "mechanism": _tokens(entry.mechanism),
        }
        score = 0.0
        for term in terms:
            for field_name, boost in _FIELD_BOOSTS:
                score += boost * fields[field_name].count(term)
        if score > 0:
            scored.append((score, entry.metric, entry))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [entry for _, _, entry in scored[:k]]
