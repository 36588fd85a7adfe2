"""Conductor and coder reasoning interfaces.

The conductor assembles a five-part prompt (candidate source, verifier
feedback, metric documentation, profiling results, historical best), adds
rule-derived bottleneck labels and a delta table as structured scaffolding,
and parses the model's reply into a Diagnosis. Verdicts are computed by code
from measured speedups, never taken from model text, so a hallucinated
"improvement" can't promote anything.
"""

from __future__ import annotations

import json
import logging
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .compendium import MetricKnowledgeEntry
from .errors import BackendMismatchError, InvalidTimingError, NoCodeFoundError
from .harness import CandidateKernel, TaskSpec, VerificationOutcome
from .llm import ChatRequest, LlmClient, TranscriptWriter, complete, extract_code
from .metrics import DATA_DIR, MetricCatalog, ProfileReport, load_catalog, profile_delta

log = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).parent / "templates"

VERDICTS = ("first_measurement", "improvement", "regression", "correctness_failure")

BOTTLENECK_LABELS = (
    "frontend_bound",
    "backend_memory_bound",
    "backend_core_bound",
    "bad_speculation",
    "low_occupancy",
    "register_pressure",
    "low_memory_throughput",
    "low_tensor_core_util",
    "underparallelized",
    "other",
)

DEFAULT_DIAGNOSIS_RETRIES = 2
DEFAULT_DOC_TOP_K = 6

_BACKEND_INSTRUCTIONS = {
    "cpu": (
        "CPU backend. Produce a complete standalone source file in the language "
        "the task asks for. It must satisfy the task's runner contract exactly."
    ),
    "gpu": (
        "GPU backend. Produce a complete Triton kernel module in Python, including "
        "the launch wrapper the task's runner contract expects."
    ),
}

_CAUSE_HINTS = {
    "build_error": (
        "The build failed. Likely causes: syntax errors, missing includes or "
        "imports, bad compiler flags. Fix compilation before anything else."
    ),
    "runtime_error": (
        "The run crashed or timed out. Likely causes: out-of-bounds access, "
        "bad launch or shape setup, infinite loops, unhandled exceptions."
    ),
    "incorrect_output": (
        "The output mismatched the reference. Likely causes: wrong indexing, "
        "off-by-one in loop bounds, reduction order or accumulator precision."
    ),
}


@dataclass(frozen=True)
class HardwareSpec:
    """Per-host parameters the conductor reasons against."""

    backend: str
    core_or_sm_count: int
    cache_hierarchy: tuple = ()
    memory_bandwidth_gbps: float | None = None
    notes: str = ""

    def __post_init__(self):
        if self.core_or_sm_count < 1:
            raise ValueError("core_or_sm_count must be >= 1")
        object.__setattr__(
            self,
            "cache_hierarchy",
            tuple((str(level), int(size)) for level, size in self.cache_hierarchy),
        )

    def summary(self) -> str:
        unit = "cores" if self.backend == "cpu" else "SMs"
        parts = [f"{self.backend} with {self.core_or_sm_count} {unit}"]
        for level, size in self.cache_hierarchy:
            parts.append(f"{level}: {size} bytes")
        if self.memory_bandwidth_gbps is not None:
            parts.append(f"memory bandwidth: {self.memory_bandwidth_gbps} GB/s")
        if self.notes:
            parts.append(self.notes)
        return "; ".join(parts)

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "core_or_sm_count": self.core_or_sm_count,
            "cache_hierarchy": [list(c) for c in self.cache_hierarchy],
            "memory_bandwidth_gbps": self.memory_bandwidth_gbps,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HardwareSpec":
        return cls(
            backend=d["backend"],
            core_or_sm_count=d["core_or_sm_count"],
            cache_hierarchy=tuple(tuple(c) for c in d.get("cache_hierarchy", [])),
            memory_bandwidth_gbps=d.get("memory_bandwidth_gbps"),
            notes=d.get("notes", ""),
        )


@dataclass(frozen=True)
class BottleneckLabel:
    """Rule-derived tag plus the (metric, value, threshold) evidence behind it."""

    label: str
    evidence: tuple  # of (metric_id, value, threshold)
    severity: float = 0.0

    def __post_init__(self):
        if self.label not in BOTTLENECK_LABELS:
            raise ValueError(f"unknown bottleneck label {self.label!r}")
        if self.label != "other" and not self.evidence:
            raise ValueError(f"label {self.label} needs evidence")
        object.__setattr__(
            self,
            "evidence",
            tuple((str(m), float(v), float(t)) for m, v, t in self.evidence),
        )

    def to_dict(self) -> dict:
        return {"label": self.label, "evidence": [list(e) for e in self.evidence],
                "severity": self.severity}

    @classmethod
    def from_dict(cls, d: dict) -> "BottleneckLabel":
        return cls(label=d["label"], evidence=tuple(tuple(e) for e in d["evidence"]),
                   severity=d.get("severity", 0.0))


@dataclass(frozen=True)
class Diagnosis:
    """Conductor output for one round."""

    verdict: str
    bottlenecks: tuple = ()
    hints: tuple = ()
    extra_metrics: tuple = ()
    rationale: str = ""

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")
        object.__setattr__(self, "bottlenecks", tuple(self.bottlenecks))
        object.__setattr__(self, "hints", tuple(str(h) for h in self.hints))
        object.__setattr__(self, "extra_metrics", tuple(str(m) for m in self.extra_metrics))

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "bottlenecks": [b.to_dict() for b in self.bottlenecks],
            "hints": list(self.hints),
            "extra_metrics": list(self.extra_metrics),
            "rationale": self.rationale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Diagnosis":
        return cls(
            verdict=d["verdict"],
            bottlenecks=tuple(BottleneckLabel.from_dict(b) for b in d.get("bottlenecks", [])),
            hints=tuple(d.get("hints", [])),
            extra_metrics=tuple(d.get("extra_metrics", [])),
            rationale=d.get("rationale", ""),
        )


@dataclass
class ConductorContext:
    """Everything the conductor sees, mirroring the five prompt components.

    Optional slots stay explicit: a missing profile or missing best record
    renders as an "(absent)" placeholder, never as a dropped section.
    """

    current_code: str
    verifier_feedback: VerificationOutcome
    hardware_spec: HardwareSpec
    metric_docs: list[MetricKnowledgeEntry] = field(default_factory=list)
    current_profile: ProfileReport | None = None
    best_record: Any | None = None  # orchestrator.BestRecord shaped
    category: str | None = None
    round: int = 0  # keeps otherwise-identical prompts distinct across rounds


# ---------------------------------------------------------------------------
# rule-based bottleneck classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rule:
    metric: str
    comparator: str
    threshold: float
    label: str
    backend: str
    relative_to: str | None = None
    categories: tuple = ()
    qualifies: str | None = None


_RULES: list[Rule] | None = None


def load_rules(path: Path | None = None) -> list[Rule]:
    global _RULES
    if path is None and _RULES is not None:
        return _RULES
    raw = json.loads((path or DATA_DIR / "rules.json").read_text())
    rules = [
        Rule(
            metric=r["metric"],
            comparator=r["comparator"],
            threshold=float(r["threshold"]),
            label=r["label"],
            backend=r["backend"],
            relative_to=r.get("relative_to"),
            categories=tuple(r.get("categories", [])),
            qualifies=r.get("qualifies"),
        )
        for r in raw
    ]
    if path is None:
        _RULES = rules
    return rules


def _severity(value: float, threshold: float, comparator: str, unit: str) -> float:
    # Normalized distance past the threshold. Percent metrics normalize by the
    # remaining headroom so "51% past a 50% bar" outranks "21% past a 20% bar".
    if comparator == ">":
        if unit == "percent" and threshold < 100.0:
            return max(0.0, (value - threshold) / (100.0 - threshold))
        return max(0.0, (value - threshold) / max(abs(threshold), 1e-12))
    return max(0.0, (threshold - value) / max(abs(threshold), 1e-12))


def classify_bottlenecks(
    profile: ProfileReport,
    hw: HardwareSpec,
    *,
    category: str | None = None,
    rules: list[Rule] | None = None,
    catalog: MetricCatalog | None = None,
) -> list[BottleneckLabel]:
    """Apply the threshold rule table to one profile, most severe label first.

    Deterministic: same profile and rules give the same labels in the same
    order. An empty result is a healthy profile, not an error.
    """
    if profile.backend != hw.backend:
        raise BackendMismatchError(
            f"profile backend {profile.backend} does not match hardware {hw.backend}"
        )
    rules = rules if rules is not None else load_rules()
    cat = catalog or load_catalog()

    fired: dict[str, tuple[Rule, float, float, float]] = {}
    for rule in rules:
        if rule.backend != profile.backend:
            continue
        if rule.categories and (category not in rule.categories):
            continue
        value = profile.values.get(rule.metric)
        if value is None:
            continue
        threshold = rule.threshold
        if rule.relative_to == "spec_bandwidth":
            if hw.memory_bandwidth_gbps is None:
                continue
            threshold = rule.threshold * hw.memory_bandwidth_gbps * 1e9
        hit = value > threshold if rule.comparator == ">" else value < threshold
        if not hit:
            continue
        unit = cat.get(rule.metric).unit if rule.metric in cat else "dimensionless"
        severity = _severity(value, threshold, rule.comparator, unit)
        fired[rule.metric] = (rule, float(value), float(threshold), severity)

    labels: list[BottleneckLabel] = []
    qualifier_metrics = {r.qualifies: m for m, (r, *_rest) in fired.items() if r.qualifies}
    for metric, (rule, value, threshold, severity) in fired.items():
        if rule.qualifies:
            continue  # qualifiers attach to their base rule below
        evidence = [(metric, value, threshold)]
        label = rule.label
        qualifier = qualifier_metrics.get(metric)
        if qualifier:
            q_rule, q_value, q_threshold, _ = fired[qualifier]
            label = q_rule.label
            evidence.append((qualifier, q_value, q_threshold))
        labels.append(BottleneckLabel(label=label, evidence=tuple(evidence), severity=severity))

    labels.sort(key=lambda l: (-l.severity, l.label))
    return labels


def compare_with_best(current_speedup: float, best_speedup: float | None) -> str:
    """Verdict from the two measured speedups alone.

    No historical best means this is the first measurement; a tie counts as a
    regression so the best record never churns between equal-speed variants.
    """
    if not current_speedup > 0:
        raise InvalidTimingError(f"current speedup must be positive, got {current_speedup}")
    if best_speedup is None:
        return "first_measurement"
    return "improvement" if current_speedup > best_speedup else "regression"


# ---------------------------------------------------------------------------
# prompt assembly
# ---------------------------------------------------------------------------

def _template(name: str) -> string.Template:
    return string.Template((TEMPLATE_DIR / name).read_text())

ABSENT = "(absent)"


def _format_profile(profile: ProfileReport | None) -> str:
    if profile is None:
        return ABSENT
    lines = [f"{name} = {profile.values[name]}" for name in sorted(profile.values)]
    lines.append(f"wall_time_ns = {profile.wall_time_ns}")
    for w in profile.warnings:
        lines.append(f"warning: {w}")
    return "\n".join(lines)


def _format_verifier(outcome: VerificationOutcome) -> str:
    lines = [f"status: {outcome.status}"]
    if outcome.status == "correct" and outcome.timing is not None:
        lines.append(f"speedup vs reference: {outcome.timing.speedup():.4f}x")
    if outcome.max_abs_err is not None:
        lines.append(f"max_abs_err: {outcome.max_abs_err}")
        lines.append(f"max_rel_err: {outcome.max_rel_err}")
    cause = _CAUSE_HINTS.get(outcome.status)
    if cause:
        lines.append(f"likely causes: {cause}")
    if outcome.logs:
        lines.append("logs:")
        lines.append(outcome.logs)
    return "\n".join(lines)


def _format_docs(docs: list[MetricKnowledgeEntry]) -> str:
    if not docs:
        return ABSENT
    blocks = []
    for e in docs:
        block = f"- {e.metric}: {e.description}"
        if e.mechanism:
            block += f" (measured via: {e.mechanism})"
        if e.bottlenecks:
            block += f" [reveals: {', '.join(e.bottlenecks)}]"
        blocks.append(block)
    return "\n".join(blocks)


def _format_best(best: Any | None) -> str:
    if best is None:
        return ABSENT
    lines = [f"speedup: {best.speedup:.4f}x (iteration {best.achieved_at_iteration})"]
    lines.append("profile:")
    lines.append(_format_profile(best.profile))
    lines.append("source:")
    lines.append(best.candidate.source)
    return "\n".join(lines)


def _format_labels(labels: list[BottleneckLabel]) -> str:
    if not labels:
        return "(none fired)"
    out = []
    for l in labels:
        ev = ", ".join(f"{m}={v:g} vs threshold {t:g}" for m, v, t in l.evidence)
        out.append(f"- {l.label} (severity {l.severity:.4f}): {ev}")
    return "\n".join(out)


def _format_delta(current: ProfileReport | None, best: Any | None) -> str:
    if current is None or best is None or best.profile is None:
        return ABSENT
    rows = []
    for name, d in profile_delta(current, best.profile).items():
        if d.side is None:
            rows.append(f"{name}: {d.baseline} -> {d.current} (delta {d.delta:+g})")
        else:
            rows.append(f"{name}: only in {d.side.replace('_', ' ')}")
    return "\n".join(rows) if rows else ABSENT


def assemble_conductor_prompt(ctx: ConductorContext, labels: list[BottleneckLabel]) -> str:
    return _template("conductor.txt").substitute(
        round=ctx.round,
        current_code=ctx.current_code or ABSENT,
        verifier_section=_format_verifier(ctx.verifier_feedback),
        metric_docs=_format_docs(ctx.metric_docs),
        profile_section=_format_profile(ctx.current_profile),
        best_section=_format_best(ctx.best_record),
        labels=_format_labels(labels),
        delta_table=_format_delta(ctx.current_profile, ctx.best_record),
        hardware=hw_summary(ctx.hardware_spec),
    )


def hw_summary(hw: HardwareSpec) -> str:
    return hw.summary()


CONDUCTOR_SYSTEM = (
    "You are the performance conductor of a kernel optimization loop: interpret "
    "verifier and profiler evidence, identify bottlenecks, and issue concrete "
    "refinement directives as JSON."
)

CODER_SYSTEM = (
    "You are an expert performance engineer generating compute kernels. Always "
    "reply with a single fenced code block containing a complete source file."
)


def _parse_diagnosis_payload(text: str) -> dict:
    body = extract_code(text, "json")
    data = json.loads(body)
    if not isinstance(data, dict):
        raise ValueError("diagnosis must be a JSON object")
    hints = data.get("hints", [])
    extra = data.get("extra_metrics", [])
    if not isinstance(hints, list) or not isinstance(extra, list):
        raise ValueError("hints and extra_metrics must be lists")
    return {
        "hints": [str(h) for h in hints],
        "extra_metrics": [str(m) for m in extra],
        "rationale": str(data.get("rationale", "")),
    }


def conduct(
    ctx: ConductorContext,
    llm: LlmClient,
    *,
    transcript: TranscriptWriter | None = None,
    retries: int = DEFAULT_DIAGNOSIS_RETRIES,
    catalog: MetricCatalog | None = None,
) -> Diagnosis:
    """Run one conductor round: verdict by code, guidance by model.

    Model output that never parses degrades to a rule-based fallback diagnosis
    so the loop keeps moving.
    """
    cat = catalog or load_catalog()
    outcome = ctx.verifier_feedback

    if outcome.status != "correct":
        verdict = "correctness_failure"
        labels: list[BottleneckLabel] = []
    else:
        current = outcome.timing.speedup()
        best = ctx.best_record.speedup if ctx.best_record is not None else None
        verdict = compare_with_best(current, best)
        labels = (
            classify_bottlenecks(ctx.current_profile, ctx.hardware_spec, category=ctx.category)
            if ctx.current_profile is not None
            else []
        )

    prompt = assemble_conductor_prompt(ctx, labels)
    request = ChatRequest(system_prompt=CONDUCTOR_SYSTEM, user_prompt=prompt, tag="conductor")

    payload: dict | None = None
    for attempt in range(retries + 1):
        response = complete(llm, request, transcript=transcript)
        try:
            payload = _parse_diagnosis_payload(response.text)
            break
        except (ValueError, KeyError, json.JSONDecodeError, NoCodeFoundError) as e:
            log.warning("conductor output unparseable (attempt %d/%d): %s",
                        attempt + 1, retries + 1, e)
    if payload is None:
        payload = {
            "hints": [
                "Model guidance unavailable this round; address the rule-based "
                "bottleneck labels listed in the diagnosis."
                if labels
                else "Model guidance unavailable this round; fix the verifier-reported "
                     "failure and keep the implementation simple."
            ],
            "extra_metrics": [],
            "rationale": "fallback diagnosis: conductor output never parsed",
        }

    extra: list[str] = []
    for m in payload["extra_metrics"]:
        if m in cat:
            extra.append(m)
        else:
            log.warning("conductor requested unknown metric %s; dropped", m)

    return Diagnosis(
        verdict=verdict,
        bottlenecks=tuple(labels),
        hints=tuple(payload["hints"]),
        extra_metrics=tuple(extra),
        rationale=payload["rationale"],
    )


# ---------------------------------------------------------------------------
# coder interface
# ---------------------------------------------------------------------------

def generate(
    task: TaskSpec,
    hw: HardwareSpec,
    llm: LlmClient,
    *,
    transcript: TranscriptWriter | None = None,
    iteration: int = 0,
) -> CandidateKernel:
    """First-attempt code generation from the task statement alone."""
    prompt = _template("coder_generate.txt").substitute(
        attempt=iteration + 1,
        description=task.description,
        backend_instructions=_BACKEND_INSTRUCTIONS[task.backend],
        hardware=hw.summary(),
    )
    request = ChatRequest(system_prompt=CODER_SYSTEM, user_prompt=prompt, tag="coder_generate")
    response = complete(llm, request, transcript=transcript)
    source = extract_code(response.text, task.language)
    return CandidateKernel(source=source, iteration=iteration, language=task.language)


def refine(
    task: TaskSpec,
    previous: CandidateKernel,
    diagnosis: Diagnosis,
    best: Any | None,
    llm: LlmClient,
    *,
    transcript: TranscriptWriter | None = None,
    iteration: int | None = None,
) -> CandidateKernel:
    """Next-round candidate from the previous source plus the diagnosis."""
    if iteration is None:
        iteration = previous.iteration + 1
    hints = "\n".join(f"- {h}" for h in diagnosis.hints) or "- (none)"
    prompt = _template("coder_refine.txt").substitute(
        attempt=iteration + 1,
        description=task.description,
        previous_source=previous.source,
        verdict=diagnosis.verdict,
        bottlenecks=", ".join(b.label for b in diagnosis.bottlenecks) or "(none)",
        hints=hints,
        rationale=diagnosis.rationale or "(none)",
        best_section=_format_best(best),
        backend_instructions=_BACKEND_INSTRUCTIONS[task.backend],
    )
    request = ChatRequest(system_prompt=CODER_SYSTEM, user_prompt=prompt, tag="coder_refine")
    response = complete(llm, request, transcript=transcript)
    source = extract_code(response.text, task.language)
    return CandidateKernel(source=source, iteration=iteration, language=task.language)
