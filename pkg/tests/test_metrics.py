import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernopt.errors import (
    BackendMismatchError,
    CatalogError,
    InvalidTimingError,
    UnknownMetricError,
)
from kernopt.metrics import (
    MetricCatalog,
    MetricDescriptor,
    MetricId,
    ProfileReport,
    TimingResult,
    default_metric_set,
    load_catalog,
    merge_metric_requests,
    profile_delta,
    speedup,
)

positive_times = st.floats(min_value=1e-6, max_value=1e15, allow_nan=False, allow_infinity=False)


# ---------------------------------------------------------------------------
# speedup
# ---------------------------------------------------------------------------

def test_speedup_identity():
    assert speedup(100e6, 100e6) == 1.0


def test_speedup_case_study_ratio():
    # 293 ms vs 100 ms must report 2.93x; any pair with that ratio does.
    assert speedup(293e6, 100e6) == pytest.approx(2.93, rel=1e-12)
    assert speedup(2.93, 1.0) == pytest.approx(2.93, rel=1e-12)


def test_speedup_slowdown():
    assert speedup(1e6, 4e6) == 0.25


@pytest.mark.parametrize("ref,cand", [(0, 1), (1, 0), (-1, 1), (1, -1), (float("inf"), 1)])
def test_speedup_rejects_nonpositive(ref, cand):
    with pytest.raises(InvalidTimingError):
        speedup(ref, cand)


@given(a=positive_times, b=positive_times)
def test_speedup_inverse_symmetry(a, b):
    assert abs(speedup(a, b) * speedup(b, a) - 1.0) <= 1e-12


@given(a=positive_times)
def test_speedup_self_is_exactly_one(a):
    assert speedup(a, a) == 1.0


def test_timing_result_speedup_and_validation():
    t = TimingResult(t_reference_ns=7998000, t_candidate_ns=6665000)
    assert t.speedup() == 1.2
    with pytest.raises(InvalidTimingError):
        TimingResult(t_reference_ns=0, t_candidate_ns=1)


def test_timing_result_roundtrip():
    t = TimingResult(1000.0, 500.0, per_run_samples=(500.0,) * 3, timed_runs=3,
                     t_reference_mean_ns=1000.0, t_candidate_mean_ns=500.0)
    assert TimingResult.from_dict(t.to_dict()) == t


# ---------------------------------------------------------------------------
# default metric sets
# ---------------------------------------------------------------------------

def test_default_set_gpu_snapshot():
    assert default_metric_set("gpu") == [
        "gpu.kernel_time",
        "gpu.occupancy",
        "gpu.registers_per_thread",
        "gpu.shared_mem_util",
        "gpu.tensor_core_active_cycles",
        "gpu.mem_throughput",
    ]


def test_default_set_cpu_snapshot():
    assert default_metric_set("cpu") == [
        "cpu.instructions_retired",
        "cpu.frontend_bound",
        "cpu.backend_bound",
        "cpu.bad_speculation",
        "cpu.cycles",
        "cpu.ipc",
    ]


def test_default_set_separation_and_unknown_backend():
    assert "cpu.frontend_bound" in default_metric_set("cpu")
    assert "gpu.occupancy" not in default_metric_set("cpu")
    with pytest.raises(UnknownMetricError):
        default_metric_set("tpu")


def test_catalog_rejects_duplicates_and_bad_names():
    d = MetricDescriptor(MetricId("cpu.x", "cpu"), "count", "neutral", False, "")
    with pytest.raises(CatalogError):
        MetricCatalog([d, d])
    with pytest.raises(CatalogError):
        MetricId("has space", "cpu")
    with pytest.raises(CatalogError):
        MetricId("", "cpu")


# ---------------------------------------------------------------------------
# merge_metric_requests
# ---------------------------------------------------------------------------

def test_merge_empty_extra():
    assert merge_metric_requests(["cpu.ipc", "cpu.cycles"], []) == ["cpu.ipc", "cpu.cycles"]


def test_merge_dedup_preserves_order():
    got = merge_metric_requests(["cpu.ipc", "cpu.cycles"], ["cpu.cycles", "cpu.retiring"])
    assert got == ["cpu.ipc", "cpu.cycles", "cpu.retiring"]


def test_merge_cpu_defaults_with_llc():
    # Hand-enumerated union: defaults in order, then the one new extra.
    got = merge_metric_requests(default_metric_set("cpu"), ["cpu.llc_miss_rate"])
    assert got == [
        "cpu.instructions_retired",
        "cpu.frontend_bound",
        "cpu.backend_bound",
        "cpu.bad_speculation",
        "cpu.cycles",
        "cpu.ipc",
        "cpu.llc_miss_rate",
    ]


def test_merge_unknown_metric_names_id():
    with pytest.raises(UnknownMetricError) as ei:
        merge_metric_requests(["cpu.ipc"], ["cpu.bogus"])
    assert "cpu.bogus" in str(ei.value)


@given(extra=st.lists(st.sampled_from(load_catalog().defaults("cpu") + ["cpu.retiring", "cpu.llc_miss_rate"]), max_size=8))
def test_merge_idempotent_and_superset(extra):
    defaults = default_metric_set("cpu")
    merged = merge_metric_requests(defaults, extra)
    assert merge_metric_requests(merged, extra) == merged
    assert set(defaults) | set(extra) == set(merged)


# ---------------------------------------------------------------------------
# ProfileReport
# ---------------------------------------------------------------------------

def _cpu_report(values, iteration=0):
    return ProfileReport(backend="cpu", values=values, iteration=iteration,
                         raw_artifact="profile.raw", wall_time_ns=1_000_000)


def test_report_derives_ipc():
    r = _cpu_report({"cpu.instructions_retired": 136000, "cpu.cycles": 242000})
    assert r.values["cpu.ipc"] == 136000 / 242000


def test_report_rejects_unknown_metric_and_backend_mix():
    with pytest.raises(UnknownMetricError):
        _cpu_report({"cpu.nope": 1})
    with pytest.raises(BackendMismatchError):
        _cpu_report({"gpu.occupancy": 50.0})


def test_report_percent_range_enforced():
    with pytest.raises(CatalogError):
        _cpu_report({"cpu.frontend_bound": 140.0})


def test_report_topdown_band():
    ok = {"cpu.frontend_bound": 5.10, "cpu.backend_bound": 61.76,
          "cpu.bad_speculation": 10.0, "cpu.retiring": 23.14}
    r = _cpu_report(ok)
    assert sum(r.values[m] for m in ok) == pytest.approx(100.0)
    bad = dict(ok, **{"cpu.retiring": 10.0})
    with pytest.raises(CatalogError):
        _cpu_report(bad)


def test_report_requires_positive_wall_time():
    with pytest.raises(CatalogError):
        ProfileReport(backend="cpu", values={}, iteration=0, raw_artifact="r", wall_time_ns=0)


def test_report_roundtrip():
    r = _cpu_report({"cpu.instructions_retired": 945000, "cpu.cycles": 500000})
    assert ProfileReport.from_dict(r.to_dict()) == r


# ---------------------------------------------------------------------------
# profile_delta
# ---------------------------------------------------------------------------

def test_delta_case_study_values():
    best = _cpu_report({"cpu.ipc": 1.37, "cpu.frontend_bound": 5.10})
    cur = _cpu_report({"cpu.ipc": 1.49, "cpu.frontend_bound": 7.68}, iteration=1)
    d = profile_delta(cur, best)
    assert d["cpu.ipc"].delta == pytest.approx(0.12, abs=1e-12)
    assert d["cpu.frontend_bound"].delta == pytest.approx(2.58, abs=1e-12)


def test_delta_identity_is_zero():
    r = _cpu_report({"cpu.ipc": 1.37, "cpu.cycles": 242000})
    assert all(v.delta == 0 for v in profile_delta(r, r).values())


def test_delta_one_sided_markers():
    a = _cpu_report({"cpu.ipc": 1.0, "cpu.cycles": 10})
    b = _cpu_report({"cpu.ipc": 2.0, "cpu.retiring": 40.0})
    d = profile_delta(a, b)
    assert d["cpu.cycles"].side == "current_only" and d["cpu.cycles"].delta is None
    assert d["cpu.retiring"].side == "baseline_only"
    assert d["cpu.ipc"].side is None


def test_delta_backend_mismatch():
    cpu = _cpu_report({"cpu.ipc": 1.0})
    gpu = ProfileReport(backend="gpu", values={"gpu.occupancy": 50.0}, iteration=0,
                        raw_artifact="r", wall_time_ns=1)
    with pytest.raises(BackendMismatchError):
        profile_delta(cpu, gpu)


metric_values = st.fixed_dictionaries(
    {},
    optional={
        "cpu.ipc": st.floats(0, 8, allow_nan=False),
        "cpu.instructions_retired": st.integers(1, 10**12),
        "cpu.llc_miss_rate": st.floats(0, 100, allow_nan=False),
        "cpu.frontend_bound": st.floats(0, 100, allow_nan=False),
    },
)


@settings(max_examples=60)
@given(va=metric_values, vb=metric_values)
def test_delta_antisymmetric(va, vb):
    a, b = _cpu_report(dict(va)), _cpu_report(dict(vb))
    ab, ba = profile_delta(a, b), profile_delta(b, a)
    assert set(ab) == set(ba)
    for name in ab:
        if ab[name].side is None:
            assert ab[name].delta == -ba[name].delta
        else:
            assert {ab[name].side, ba[name].side} == {"current_only", "baseline_only"}
