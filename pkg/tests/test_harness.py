import sys
from pathlib import Path

import numpy as np
import pytest

from kernopt.errors import (
    RunnerConfigError,
    TaskInfrastructureError,
    TensorFormatError,
    TimingProtocolError,
)
from kernopt.harness import (
    CandidateKernel,
    RunnerConfig,
    TaskSpec,
    Tolerance,
    VerificationOutcome,
    aggregate_times,
    compare_tensors,
    read_timing_file,
    substitute_argv,
    truncate_log,
    verify,
)
from kernopt.metrics import TimingResult
from kernopt.tensorfile import write_tensor

REFERENCE_SOURCE = """\
TIME_NS = 7998000

def compute(xs):
    return [x + 1.0 for x in xs]
"""


def toy_argv(source_arg: str) -> tuple[str, ...]:
    return (
        sys.executable, "-m", "kernopt.toyrunner",
        "--mode", "{mode}", "--source", source_arg,
        "--output", "{output_path}", "--timing", "{timing_path}",
        "--warmup", "{warmup}", "--reps", "{reps}",
    )


@pytest.fixture()
def toy_task(tmp_path):
    task_dir = tmp_path / "task"
    task_dir.mkdir()
    (task_dir / "reference.py").write_text(REFERENCE_SOURCE)
    return TaskSpec(
        task_id="toy-add",
        category="other",
        backend="cpu",
        description="add one to every element",
        runner=RunnerConfig(argv=toy_argv("{task_dir}/reference.py"), timeout_s=30),
        candidate_runner_template=RunnerConfig(argv=toy_argv("{source_path}"), timeout_s=30),
        tolerance=Tolerance(atol=1e-9, rtol=0.0),
        max_attempts=4,
        base_dir=str(task_dir),
    )


def _verify(task, source, workdir, **kw):
    kw.setdefault("warmup", 1)
    kw.setdefault("reps", 4)
    return verify(task, CandidateKernel(source=source, iteration=0, language="python"),
                  workdir, **kw)


# ---------------------------------------------------------------------------
# verify end to end against the toy runner
# ---------------------------------------------------------------------------

def test_identical_candidate_is_correct_with_unit_speedup(toy_task, tmp_path):
    outcome = _verify(toy_task, REFERENCE_SOURCE, tmp_path / "iter0")
    assert outcome.status == "correct"
    assert outcome.max_abs_err == 0.0
    assert outcome.timing.speedup() == 1.0
    assert len(outcome.timing.per_run_samples) == 4


def test_faster_candidate_reports_exact_speedup(toy_task, tmp_path):
    fast = REFERENCE_SOURCE.replace("7998000", "6665000")
    outcome = _verify(toy_task, fast, tmp_path / "iter0")
    assert outcome.status == "correct"
    assert outcome.timing.speedup() == 1.2


def test_wrong_shape_is_incorrect_output(toy_task, tmp_path):
    bad = "def compute(xs):\n    return [1.0, 2.0]\n"
    outcome = _verify(toy_task, bad, tmp_path / "iter0")
    assert outcome.status == "incorrect_output"
    assert "shape mismatch" in outcome.logs
    assert outcome.timing is None


def test_wrong_values_report_error_magnitude(toy_task, tmp_path):
    bad = "def compute(xs):\n    return [x + 2.0 for x in xs]\n"
    outcome = _verify(toy_task, bad, tmp_path / "iter0")
    assert outcome.status == "incorrect_output"
    assert outcome.max_abs_err == pytest.approx(1.0)


def test_crashing_candidate_is_runtime_error(toy_task, tmp_path):
    outcome = _verify(toy_task, "raise RuntimeError('injected failure')\n", tmp_path / "iter0")
    assert outcome.status == "runtime_error"
    assert "injected failure" in outcome.logs


def test_empty_source_is_build_error(toy_task, tmp_path):
    outcome = _verify(toy_task, "", tmp_path / "iter0")
    assert outcome.status == "build_error"


def test_sleeping_candidate_hits_timeout(toy_task, tmp_path):
    task = TaskSpec(
        **{**toy_task.__dict__,
           "candidate_runner_template": RunnerConfig(argv=toy_argv("{source_path}"), timeout_s=2)}
    )
    outcome = _verify(task, "import time\ntime.sleep(60)\n", tmp_path / "iter0")
    assert outcome.status == "runtime_error"
    assert "timed out" in outcome.logs


def test_missing_reference_is_infrastructure_error(toy_task, tmp_path):
    Path(toy_task.base_dir, "reference.py").unlink()
    with pytest.raises(TaskInfrastructureError):
        _verify(toy_task, REFERENCE_SOURCE, tmp_path / "iter0")


def test_build_step_failure_is_build_error(toy_task, tmp_path):
    task = TaskSpec(
        **{**toy_task.__dict__,
           "candidate_runner_template": RunnerConfig(
               argv=toy_argv("{source_path}"),
               build_argv=(sys.executable, "-c", "import sys; sys.stderr.write('compile boom'); sys.exit(1)"),
               timeout_s=30,
           )}
    )
    outcome = _verify(task, REFERENCE_SOURCE, tmp_path / "iter0")
    assert outcome.status == "build_error"
    assert "compile boom" in outcome.logs


def test_candidate_timing_protocol_violation_is_runtime_error(toy_task, tmp_path):
    # A runner that produces correct output but writes too few timing lines.
    bad_runner = tmp_path / "bad_runner.py"
    bad_runner.write_text(
        "import sys\n"
        "sys.argv = [a for a in sys.argv]\n"
        "args = dict(zip(sys.argv[1::2], sys.argv[2::2]))\n"
        "from kernopt.toyrunner import run\n"
        "if args['--mode'] == 'produce':\n"
        "    sys.exit(run(sys.argv[1:]))\n"
        "reps = int(args['--reps'])\n"
        "with open(args['--timing'], 'w') as f:\n"
        "    for _ in range(reps - 1):\n"
        "        f.write('1000\\n')\n"
    )
    argv = (
        sys.executable, str(bad_runner),
        "--mode", "{mode}", "--source", "{source_path}",
        "--output", "{output_path}", "--timing", "{timing_path}",
        "--warmup", "{warmup}", "--reps", "{reps}",
    )
    task = TaskSpec(
        **{**toy_task.__dict__,
           "candidate_runner_template": RunnerConfig(argv=argv, timeout_s=30)}
    )
    outcome = _verify(task, REFERENCE_SOURCE, tmp_path / "iter0")
    assert outcome.status == "runtime_error"
    assert "samples" in outcome.logs


def test_fresh_workdirs_reproduce_status(toy_task, tmp_path):
    a = _verify(toy_task, REFERENCE_SOURCE, tmp_path / "a")
    b = _verify(toy_task, REFERENCE_SOURCE, tmp_path / "b")
    assert a.status == b.status == "correct"
    # Deterministic toy timing means even the samples agree.
    assert a.timing == b.timing


def test_artifacts_written(toy_task, tmp_path):
    workdir = tmp_path / "iter0"
    _verify(toy_task, REFERENCE_SOURCE, workdir)
    for name in ("candidate.src", "out.kstn", "ref.kstn", "times.txt", "run.log"):
        assert (workdir / name).exists()


# ---------------------------------------------------------------------------
# compare_tensors
# ---------------------------------------------------------------------------

def _pair(tmp_path, a, b):
    pa, pb = tmp_path / "a.kstn", tmp_path / "b.kstn"
    write_tensor(pa, a)
    write_tensor(pb, b)
    return pa, pb


def test_compare_exact_equal(tmp_path):
    x = np.arange(8, dtype=np.float64)
    pa, pb = _pair(tmp_path, x, x.copy())
    res = compare_tensors(pa, pb, atol=0.0, rtol=0.0)
    assert res.passed and res.max_abs_err == 0.0


def test_compare_small_perturbation_within_atol(tmp_path):
    b = np.ones(16, dtype=np.float64)
    a = b + 1e-9
    pa, pb = _pair(tmp_path, a, b)
    res = compare_tensors(pa, pb, atol=1e-8, rtol=0.0)
    assert res.passed
    assert res.max_abs_err == pytest.approx(1e-9)


def test_compare_single_element_off(tmp_path):
    b = np.zeros(10, dtype=np.float64)
    a = b.copy()
    a[3] = 1.0
    pa, pb = _pair(tmp_path, a, b)
    res = compare_tensors(pa, pb, atol=1e-5, rtol=0.0)
    assert not res.passed
    assert res.max_abs_err == 1.0


def test_compare_shape_and_dtype_mismatch(tmp_path):
    pa, pb = _pair(tmp_path, np.zeros((2, 3)), np.zeros((3, 2)))
    assert not compare_tensors(pa, pb, 1e-4, 1e-4).passed
    pa, pb = _pair(tmp_path, np.zeros(4, dtype=np.float32), np.zeros(4, dtype=np.float64))
    res = compare_tensors(pa, pb, 1e-4, 1e-4)
    assert not res.passed and "dtype" in res.reason


def test_compare_malformed_file(tmp_path):
    bad = tmp_path / "bad.kstn"
    bad.write_bytes(b"not a tensor")
    good = tmp_path / "good.kstn"
    write_tensor(good, np.zeros(3))
    with pytest.raises(TensorFormatError):
        compare_tensors(bad, good, 1e-4, 1e-4)


def test_compare_atol_only_is_symmetric(tmp_path):
    rng = np.random.default_rng(3)
    a = rng.standard_normal(32)
    b = a + rng.uniform(-1e-6, 1e-6, size=32)
    pa, pb = _pair(tmp_path, a, b)
    assert (compare_tensors(pa, pb, 1e-5, 0.0).passed
            == compare_tensors(pb, pa, 1e-5, 0.0).passed)


# ---------------------------------------------------------------------------
# timing protocol pieces
# ---------------------------------------------------------------------------

def test_read_timing_identical_samples(tmp_path):
    p = tmp_path / "times.txt"
    p.write_text("5000\n" * 100)
    samples = read_timing_file(p, 100)
    assert aggregate_times(samples, "median") == 5000
    assert aggregate_times(samples, "mean") == 5000


def test_median_robust_to_outlier(tmp_path):
    p = tmp_path / "times.txt"
    p.write_text("\n".join(["1000000"] * 99 + ["100000000"]) + "\n")
    samples = read_timing_file(p, 100)
    assert aggregate_times(samples, "median") == 1000000
    assert aggregate_times(samples, "mean") > 1000000


def test_wrong_sample_count_raises(tmp_path):
    p = tmp_path / "times.txt"
    p.write_text("1000\n" * 99)
    with pytest.raises(TimingProtocolError):
        read_timing_file(p, 100)


def test_non_integer_sample_raises(tmp_path):
    p = tmp_path / "times.txt"
    p.write_text("12.5\n")
    with pytest.raises(TimingProtocolError):
        read_timing_file(p, 1)


# ---------------------------------------------------------------------------
# misc plumbing
# ---------------------------------------------------------------------------

def test_substitute_argv_rejects_unknown_placeholder():
    with pytest.raises(RunnerConfigError):
        substitute_argv(("run", "{nonsense}"), {"mode": "produce"})


def test_truncate_log_keeps_head_and_tail():
    text = "H" * 40000 + "MIDDLE" + "T" * 40000
    out = truncate_log(text, cap=1024)
    assert out.startswith("H")
    assert out.endswith("T")
    assert "truncated" in out
    assert len(out.encode()) < 2048


def test_outcome_invariants():
    with pytest.raises(RunnerConfigError):
        VerificationOutcome(status="correct", logs="")  # timing missing
    with pytest.raises(RunnerConfigError):
        VerificationOutcome(status="runtime_error", logs="")  # logs required
    timing = TimingResult(1000, 1000, warmup_runs=1, timed_runs=1)
    with pytest.raises(RunnerConfigError):
        VerificationOutcome(status="build_error", logs="x", timing=timing)


def test_outcome_roundtrip():
    timing = TimingResult(2000, 1000, warmup_runs=1, timed_runs=2, per_run_samples=(1000, 1000))
    out = VerificationOutcome(status="correct", logs="", max_abs_err=0.0,
                              max_rel_err=0.0, timing=timing)
    assert VerificationOutcome.from_dict(out.to_dict()) == out
