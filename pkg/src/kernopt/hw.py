"""Host hardware discovery for conductor context.

CPU parameters come from lscpu (core count, cache sizes); GPU and accelerator
specs are user-supplied JSON files since there is no portable probe.
"""

from __future__ import annotations

import json
import logging
import os
import re
import subprocess
from pathlib import Path

from .agents import HardwareSpec

log = logging.getLogger(__name__)

_SIZE_RE = re.compile(r"([\d.]+)\s*([KMGT]?i?B?)", re.IGNORECASE)

_UNIT_BYTES = {
    "": 1, "b": 1,
    "k": 1024, "kb": 1000, "kib": 1024,
    "m": 1024 ** 2, "mb": 1000 ** 2, "mib": 1024 ** 2,
    "g": 1024 ** 3, "gb": 1000 ** 3, "gib": 1024 ** 3,
    "t": 1024 ** 4, "tb": 1000 ** 4, "tib": 1024 ** 4,
}


def _parse_size(text: str) -> int | None:
    m = _SIZE_RE.search(text)
    if not m:
        return None
    value = float(m.group(1))
    unit = m.group(2).lower()
    factor = _UNIT_BYTES.get(unit)
    if factor is None:
        return None
    return int(value * factor)


def parse_lscpu(text: str) -> HardwareSpec:
    """CPU HardwareSpec from lscpu's key: value output."""
    cores = None
    caches: list[tuple[str, int]] = []
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, _, value = line.partition(":")
        key = key.strip()
        value = value.strip()
        if key == "CPU(s)":
            try:
                cores = int(value)
            except ValueError:
                pass
        elif key in ("L1d cache", "L1i cache", "L2 cache", "L3 cache"):
            size = _parse_size(value)
            if size is not None:
                caches.append((key.split()[0], size))
    return HardwareSpec(
        backend="cpu",
        core_or_sm_count=cores or os.cpu_count() or 1,
        cache_hierarchy=tuple(caches),
    )


def probe_cpu() -> HardwareSpec:
    """Best-effort host probe; degrades to a bare core count."""
    try:
        out = subprocess.run(["lscpu"], capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout:
            return parse_lscpu(out.stdout)
    except (OSError, subprocess.TimeoutExpired) as e:
        log.warning("lscpu probe failed: %s", e)
    return HardwareSpec(backend="cpu", core_or_sm_count=os.cpu_count() or 1)


def load_hw_file(path: Path | str) -> HardwareSpec:
    return HardwareSpec.from_dict(json.loads(Path(path).read_text()))
