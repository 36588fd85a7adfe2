"""Command-line entry point.

Subcommands:
  run         drive the optimization loop over a task directory
  evaluate    aggregate finished state into suite metrics
  compendium  build the offline metric knowledge base
  replay      deterministic re-run from a recorded transcript
  hw          probe or inspect hardware specs

Exit codes: 0 success, 1 usage error, 2 infrastructure failure,
3 partial-suite failure (some tasks completed, some did not).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .compendium import Compendium, build_compendium, read_sources_file
from .errors import KernoptError
from .evaluate import evaluate_suite, load_suite_results, report_render
from .harness import discover_tasks
from .hw import load_hw_file, probe_cpu
from .llm import HttpOpenAiClient, ReplayClient, ScriptedClient, TranscriptWriter
from .orchestrator import TaskDeps, run_or_resume
from .profilers import get_adapter

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFRA = 2
EXIT_PARTIAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="kernopt", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run the optimization loop over a task suite")
    _add_run_args(run)
    run.add_argument("--provider", default="http-openai-compatible",
                     choices=["http-openai-compatible", "replay", "scripted"])
    run.add_argument("--transcript", help="transcript file (required for --provider replay)")

    ev = sub.add_parser("evaluate", help="aggregate finished runs into suite metrics")
    ev.add_argument("--state", required=True)
    ev.add_argument("--format", default="table", choices=["table", "json", "csv"])
    ev.add_argument("--out", help="write the report here instead of stdout")
    ev.add_argument("--fast1-inclusive", action="store_true",
                    help="count speedup == 1.0 as fast (default is strictly faster)")
    ev.add_argument("--include-infra", action="store_true",
                    help="keep infrastructure-failed tasks in the denominators")

    comp = sub.add_parser("compendium", help="offline knowledge-base commands")
    comp_sub = comp.add_subparsers(dest="compendium_command", required=True, parser_class=_Parser)
    build = comp_sub.add_parser("build", help="build compendium.json from documentation sources")
    build.add_argument("--sources", required=True, help="file with one url-or-path per line")
    build.add_argument("--out", required=True)
    build.add_argument("--provider", default="http-openai-compatible",
                       choices=["http-openai-compatible", "scripted", "replay"])
    build.add_argument("--script", help="scripted-provider response file")
    build.add_argument("--transcript", help="transcript file for provider replay")
    build.add_argument("--char-budget", type=int, default=4000)
    build.add_argument("--backends", default="cpu,gpu")
    _add_provider_args(build)

    replay = sub.add_parser("replay", help="deterministic re-run from a transcript")
    replay.add_argument("--transcript", required=True)
    _add_run_args(replay)

    hw = sub.add_parser("hw", help="hardware spec commands")
    hw_sub = hw.add_subparsers(dest="hw_command", required=True, parser_class=_Parser)
    probe = hw_sub.add_parser("probe", help="extract the host CPU spec (core count, caches)")
    probe.add_argument("--out", help="write JSON here instead of stdout")

    return parser


def _add_provider_args(p) -> None:
    p.add_argument("--endpoint", default="http://127.0.0.1:8000/v1")
    p.add_argument("--model", default="default-model")
    p.add_argument("--key-env", default="LLM_API_KEY")


def _add_run_args(p) -> None:
    p.add_argument("--tasks", required=True, help="directory of task JSON files")
    p.add_argument("--backend", required=True, choices=["cpu", "gpu"])
    p.add_argument("--state", required=True, help="state directory for records and artifacts")
    p.add_argument("--max-attempts", type=int, help="override each task's attempt budget")
    p.add_argument("--parallel", type=int, default=1, help="tasks to run concurrently")
    p.add_argument("--profiler", choices=["perf", "ncu", "fixture"],
                   help="default: perf for cpu, ncu for gpu, fixture when --fixture-dir is set")
    p.add_argument("--fixture-dir", help="stored profiler outputs for the fixture adapter")
    p.add_argument("--script", help="scripted-provider response file")
    p.add_argument("--compendium", help="compendium.json to feed conductor prompts")
    p.add_argument("--hw-file", help="hardware spec JSON (required for gpu)")
    p.add_argument("--target-speedup", type=float,
                   help="stop a task early once its best speedup reaches this")
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--reps", type=int, default=100)
    _add_provider_args(p)


def _make_client(args, provider: str):
    if provider == "replay":
        if not args.transcript:
            raise KernoptError("--provider replay requires --transcript")
        return ReplayClient(args.transcript)
    if provider == "scripted":
        if not args.script:
            raise KernoptError("--provider scripted requires --script")
        return ScriptedClient.from_json(args.script)
    return HttpOpenAiClient(endpoint=args.endpoint, model=args.model, key_env=args.key_env)


def _make_profiler(args):
    name = args.profiler or ("fixture" if args.fixture_dir else
                             ("perf" if args.backend == "cpu" else "ncu"))
    if name == "fixture":
        if not args.fixture_dir:
            raise KernoptError("the fixture profiler requires --fixture-dir")
        return get_adapter("fixture", root=args.fixture_dir, backend=args.backend)
    return get_adapter(name)


def _make_hw(args):
    if args.hw_file:
        return load_hw_file(args.hw_file)
    if args.backend == "gpu":
        raise KernoptError("gpu runs need --hw-file (no portable GPU probe)")
    return probe_cpu()


def _cmd_run(args, provider: str) -> int:
    state_dir = Path(args.state)
    state_dir.mkdir(parents=True, exist_ok=True)
    try:
        tasks = [t for t in discover_tasks(args.tasks) if t.backend == args.backend]
        if not tasks:
            print(f"error: no {args.backend} tasks under {args.tasks}", file=sys.stderr)
            return EXIT_USAGE
        if args.max_attempts:
            tasks = [dataclasses.replace(t, max_attempts=args.max_attempts) for t in tasks]
        deps = TaskDeps(
            llm=_make_client(args, provider),
            hw=_make_hw(args),
            profiler=_make_profiler(args),
            compendium=Compendium.load(args.compendium) if args.compendium else None,
            transcript=TranscriptWriter(state_dir / "transcript.ndjson"),
            warmup=args.warmup,
            reps=args.reps,
        )
    except (KernoptError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFRA

    failures = 0
    completions = 0

    def one(task):
        return run_or_resume(task, deps, state_dir, target_speedup=args.target_speedup)

    with ThreadPoolExecutor(max_workers=max(1, args.parallel)) as pool:
        for task, outcome in zip(tasks, pool.map(_safe(one), tasks)):
            if isinstance(outcome, Exception):
                failures += 1
                print(f"task {task.task_id}: aborted: {outcome}", file=sys.stderr)
            elif outcome.infrastructure_error:
                failures += 1
                completions += 1
                print(f"task {task.task_id}: infrastructure failure: "
                      f"{outcome.infrastructure_error}", file=sys.stderr)
            else:
                completions += 1
                best = f"{outcome.best.speedup:.4f}x" if outcome.best else "no correct kernel"
                print(f"task {task.task_id}: attempts={outcome.attempts_used} best={best}")

    if failures == 0:
        return EXIT_OK
    return EXIT_PARTIAL if completions > 0 else EXIT_INFRA


def _safe(fn):
    def wrapped(task):
        try:
            return fn(task)
        except Exception as e:  # surfaced per task; the suite keeps going
            return e

    return wrapped


def _cmd_evaluate(args) -> int:
    results = load_suite_results(args.state)
    if not results:
        print(f"error: no finished task results under {args.state}", file=sys.stderr)
        return EXIT_INFRA
    report = evaluate_suite(
        results,
        fast1_inclusive=args.fast1_inclusive,
        include_infrastructure_failures=args.include_infra,
    )
    text = report_render(report, args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_compendium_build(args) -> int:
    try:
        client = _make_client(args, args.provider)
        sources = read_sources_file(args.sources)
        comp = build_compendium(
            sources,
            client,
            char_budget=args.char_budget,
            backends=tuple(args.backends.split(",")),
        )
    except (KernoptError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INFRA
    comp.save(args.out)
    print(f"wrote {args.out} with {len(comp.entries)} entries "
          f"(content hash {comp.content_hash()[:12]})")
    return EXIT_OK


def _cmd_hw_probe(args) -> int:
    spec = probe_cpu()
    text = json.dumps(spec.to_dict(), sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args, args.provider)
    if args.command == "replay":
        return _cmd_run(args, "replay")
    if args.command == "evaluate":
        return _cmd_evaluate(args)
    if args.command == "compendium":
        return _cmd_compendium_build(args)
    if args.command == "hw":
        return _cmd_hw_probe(args)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
