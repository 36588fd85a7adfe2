"""Profiler adapters: run external profilers or replay captured exports.

Adding a backend-specific profiler means implementing one adapter and
registering it here; nothing upstream changes.
"""

from .base import ProfileRequest, ProfilerAdapter, collect, get_adapter, register_adapter
from .fixture import FixtureAdapter
from .ncu import NcuAdapter, ncu_parse
from .perf import PerfAdapter, perf_parse

register_adapter("perf", PerfAdapter)
register_adapter("ncu", NcuAdapter)
register_adapter("fixture", FixtureAdapter)

__all__ = [
    "FixtureAdapter",
    "NcuAdapter",
    "PerfAdapter",
    "ProfileRequest",
    "ProfilerAdapter",
    "collect",
    "get_adapter",
    "ncu_parse",
    "perf_parse",
    "register_adapter",
]
