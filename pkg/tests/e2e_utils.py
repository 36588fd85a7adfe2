"""Builders for the deterministic desk run: a toy CPU task whose scripted
candidates land at exact speedups {fail, 0.31, 0.86, 1.20}.

Reference time is 7,998,000 ns; candidate times 25,800,000 / 9,300,000 /
6,665,000 ns divide it to exactly 0.31, 0.86, and 1.20 in float arithmetic.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

REFERENCE_TIME_NS = 7_998_000
CANDIDATE_TIMES_NS = (25_800_000, 9_300_000, 6_665_000)  # 0.31x, 0.86x, 1.20x

REFERENCE_SOURCE = f"""\
TIME_NS = {REFERENCE_TIME_NS}

def compute(xs):
    return [x + 1.0 for x in xs]
"""

FAILING_CANDIDATE = """\
def compute(xs):
    raise RuntimeError('injected failure')
"""


def _candidate(time_ns: int) -> str:
    return f"TIME_NS = {time_ns}\n\ndef compute(xs):\n    return [x + 1.0 for x in xs]\n"


def _fence(source: str) -> str:
    return f"```python\n{source}```"


DIAGNOSIS_RESPONSE = (
    "```json\n"
    + json.dumps({
        "hints": ["start from the historical best and reduce per-element work"],
        "extra_metrics": [],
        "rationale": "scripted guidance for the desk run",
    })
    + "\n```"
)

# perf-format fixture profiles for the three correct attempts (iterations 1-3).
PROFILE_FIXTURES = {
    "iter1.txt": (
        "13000000,,instructions,,,,\n"
        "10000000,,cycles,,,,\n"
        "7.68,%,topdown-fe-bound,,,,\n"
        "57.24,%,topdown-be-bound,,,,\n"
        "2000000,ns,duration_time,,,,\n"
    ),
    "iter2.txt": (
        "9450000,,instructions,,,,\n"
        "6900000,,cycles,,,,\n"
        "5.10,%,topdown-fe-bound,,,,\n"
        "61.76,%,topdown-be-bound,,,,\n"
        "1500000,ns,duration_time,,,,\n"
    ),
    "iter3.txt": (
        "1360000,,instructions,,,,\n"
        "2420000,,cycles,,,,\n"
        "4.20,%,topdown-fe-bound,,,,\n"
        "51.00,%,topdown-be-bound,,,,\n"
        "900000,ns,duration_time,,,,\n"
    ),
}


def toy_runner_argv(source_arg: str) -> list[str]:
    return [
        sys.executable, "-m", "kernopt.toyrunner",
        "--mode", "{mode}", "--source", source_arg,
        "--output", "{output_path}", "--timing", "{timing_path}",
        "--warmup", "{warmup}", "--reps", "{reps}",
    ]


def write_toy_suite(root: Path, task_id: str = "toy-add-cpu") -> Path:
    """Task directory with one 4-attempt toy task driven by the toy runner."""
    tasks_dir = root / "tasks"
    tasks_dir.mkdir(parents=True, exist_ok=True)
    (tasks_dir / "reference.py").write_text(REFERENCE_SOURCE)
    task = {
        "task_id": task_id,
        "category": "other",
        "backend": "cpu",
        "description": (
            "Given the fixed 16-element input vector, return a list where every "
            "element is increased by exactly 1.0. Define compute(xs) in Python."
        ),
        "runner": {"argv": toy_runner_argv("{task_dir}/reference.py"), "timeout_s": 60},
        "candidate_runner_template": {"argv": toy_runner_argv("{source_path}"), "timeout_s": 60},
        "tolerance": {"atol": 1e-9, "rtol": 0.0},
        "max_attempts": 4,
        "seed": 7,
        "language": "python",
    }
    (tasks_dir / f"{task_id}.json").write_text(json.dumps(task, indent=2, sort_keys=True) + "\n")
    return tasks_dir


def write_fixture_profiles(root: Path) -> Path:
    fixture_dir = root / "perf_fixtures"
    fixture_dir.mkdir(parents=True, exist_ok=True)
    for name, text in PROFILE_FIXTURES.items():
        (fixture_dir / name).write_text(text)
    return fixture_dir


def write_script(root: Path) -> Path:
    """Scripted-provider responses: 1 failing generate, 3 refinements, plus a
    default diagnosis for every conductor round."""
    script = {
        "by_tag": {
            "coder_generate": [_fence(FAILING_CANDIDATE)],
            "coder_refine": [_fence(_candidate(t)) for t in CANDIDATE_TIMES_NS],
        },
        "default": DIAGNOSIS_RESPONSE,
    }
    path = root / "responses.json"
    path.write_text(json.dumps(script, indent=2, sort_keys=True) + "\n")
    return path


def normalized_tree(state_dir: Path) -> dict[str, object]:
    """Repeatable snapshot of a state directory with timestamps stripped.

    JSON and ndjson payloads are parsed and volatile keys (ts, built_at)
    removed; every other file compares as raw bytes.
    """
    VOLATILE = {"ts", "built_at"}

    def scrub(obj):
        if isinstance(obj, dict):
            return {k: scrub(v) for k, v in sorted(obj.items()) if k not in VOLATILE}
        if isinstance(obj, list):
            return [scrub(v) for v in obj]
        return obj

    snapshot: dict[str, object] = {}
    for path in sorted(state_dir.rglob("*")):
        if not path.is_file():
            continue
        rel = str(path.relative_to(state_dir))
        if path.suffix == ".ndjson":
            snapshot[rel] = [scrub(json.loads(l)) for l in path.read_text().splitlines() if l.strip()]
        elif path.suffix == ".json":
            snapshot[rel] = scrub(json.loads(path.read_text()))
        else:
            snapshot[rel] = path.read_bytes()
    return snapshot
