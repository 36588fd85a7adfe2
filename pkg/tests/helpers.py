"""Deterministic LLM stubs and shared paths used across the test suite."""

from __future__ import annotations

import json
from pathlib import Path

from kernopt.llm import LlmClient
from kernopt.metrics import DATA_DIR, load_catalog

BUNDLED_SOURCES = DATA_DIR / "docs" / "sources.txt"

_BOTTLENECK_HINTS = {
    "cpu.backend_bound": ["memory bound", "core bound"],
    "cpu.frontend_bound": ["instruction cache pressure", "decode limits"],
    "cpu.bad_speculation": ["branch mispredictions"],
    "cpu.llc_miss_rate": ["memory bound", "poor locality"],
    "gpu.occupancy": ["low occupancy", "latency hiding lost"],
    "gpu.registers_per_thread": ["register pressure"],
    "gpu.mem_throughput": ["uncoalesced access", "memory bound"],
    "gpu.tensor_core_active_cycles": ["tensor cores idle"],
}


def entry_payload(metric: str) -> dict:
    return {
        "metric": metric,
        "description": f"{metric} as documented for the profiling tool.",
        "mechanism": f"collected by the backend profiler as {metric}",
        "bottlenecks": _BOTTLENECK_HINTS.get(metric, ["general inefficiency"]),
    }


class DocExtractorClient(LlmClient):
    """Summarizer stub: emits an entry for every catalog id whose heading
    appears verbatim in the prompt, and performs mechanical merges.

    Pure function of the prompt, so compendium builds driven by it are fully
    deterministic regardless of how the documentation got segmented.
    """

    name = "scripted"

    def __init__(self):
        self.calls = 0

    def complete_once(self, request):
        self.calls += 1
        if "MERGE REQUEST" in request.system_prompt:
            group = json.loads(request.user_prompt)
            merged = dict(group[0])
            merged["description"] = " | ".join(
                dict.fromkeys(e["description"] for e in group)
            )
            merged["bottlenecks"] = list(
                dict.fromkeys(b for e in group for b in e.get("bottlenecks", []))
            )
            merged.pop("provenance", None)
            merged.pop("conflicting", None)
            return json.dumps(merged)
        found = [n for n in load_catalog().names() if f"### {n}" in request.user_prompt]
        return json.dumps([entry_payload(n) for n in found])
