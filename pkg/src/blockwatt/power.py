"""Power-source abstraction.

Uniform interface over energy-counter sensors (powercap-style cumulative
microjoule counters), direct power meters (INA231-style period-averaged watts),
replayed traces, and synthetic sources. Counter sources convert energy deltas
to watts; the first read only seeds the counter state and emits nothing.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

# Well-known domain names; any other string is a custom domain.
PKG = "PKG"
PP0 = "PP0"
PP1 = "PP1"
DRAM = "DRAM"
BIG_CLUSTER = "BIG_CLUSTER"
LITTLE_CLUSTER = "LITTLE_CLUSTER"
GPU = "GPU"
WELL_KNOWN_DOMAINS = (PKG, PP0, PP1, DRAM, BIG_CLUSTER, LITTLE_CLUSTER, GPU)

POWER_TRACE_HEADER = "timestamp_ns,domain,watts"

# Reject counter-derived readings above this unless configured otherwise
# (10x a generous package TDP).
DEFAULT_SUSPECT_CAP_WATTS = 10.0 * 250.0


class PowerSourceError(RuntimeError):
    """Device or trace failure; message names the path/domain."""


class EndOfTrace(PowerSourceError):
    """Replayed trace is exhausted."""


@dataclass(frozen=True)
class PowerSample:
    """Per-domain instantaneous power at one sample instant."""

    timestamp_ns: int
    readings: dict[str, float]
    suspect: bool = False

    @property
    def total_watts(self) -> float:
        return sum(self.readings.values())


@dataclass(frozen=True)
class EnergyCounterState:
    """Rolling state for one cumulative-energy counter domain."""

    last_raw_uj: float
    wrap_range_uj: float
    last_time_ns: int

    def __post_init__(self) -> None:
        if not 0 <= self.last_raw_uj < self.wrap_range_uj:
            raise ValueError(
                f"counter value {self.last_raw_uj} outside [0, {self.wrap_range_uj})"
            )


def power_from_energy_delta(
    prev: EnergyCounterState,
    raw_now_uj: float,
    t_now_ns: int,
    suspect_cap_watts: float = DEFAULT_SUSPECT_CAP_WATTS,
) -> tuple[float, EnergyCounterState, bool]:
    """Convert an energy-counter delta into mean watts over the interval.

    A raw value below the previous one is treated as a single counter
    wraparound. Returns (watts, new_state, suspect); suspect readings exceed
    the plausibility cap and should be excluded from estimation but kept in
    raw traces.
    """
    if t_now_ns <= prev.last_time_ns:
        raise PowerSourceError(
            f"non-advancing counter timestamp: {t_now_ns} <= {prev.last_time_ns}"
        )
    delta_uj = raw_now_uj - prev.last_raw_uj
    if delta_uj < 0:
        delta_uj = prev.wrap_range_uj - prev.last_raw_uj + raw_now_uj
        if delta_uj >= prev.wrap_range_uj:  # rounding of a ~zero backwards step
            delta_uj = 0.0
    dt_s = (t_now_ns - prev.last_time_ns) * 1e-9
    watts = (delta_uj * 1e-6) / dt_s
    state = EnergyCounterState(raw_now_uj % prev.wrap_range_uj, prev.wrap_range_uj, t_now_ns)
    return watts, state, watts > suspect_cap_watts


class MockSource:
    """Constant readings; timestamps advance by a fixed step per read."""

    def __init__(self, readings: dict[str, float], step_ns: int = 10_000_000):
        if not readings:
            raise PowerSourceError("mock source needs at least one domain")
        self.readings = dict(readings)
        self.step_ns = step_ns
        self._t = 0

    @property
    def domains(self) -> list[str]:
        return list(self.readings)

    def read(self) -> PowerSample:
        self._t += self.step_ns
        return PowerSample(self._t, dict(self.readings))

    def close(self) -> None:
        pass


class ReplaySource:
    """Replays a recorded power trace, one PowerSample per timestamp group."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        if not self.path.exists():
            raise PowerSourceError(f"power trace not found: {self.path}")
        self._samples = read_power_trace(self.path)
        self._pos = 0

    @property
    def domains(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self._samples:
            for d in s.readings:
                seen.setdefault(d)
        return list(seen)

    def read(self) -> PowerSample:
        if self._pos >= len(self._samples):
            raise EndOfTrace(f"power trace exhausted: {self.path}")
        s = self._samples[self._pos]
        self._pos += 1
        return s

    def close(self) -> None:
        pass


class CounterDirSource:
    """Powercap-layout energy counters: per-domain directory with `energy_uj`
    and `max_energy_range_uj` files. Opening seeds the counter state; every
    subsequent read emits delta-derived watts."""

    def __init__(
        self,
        domain_dirs: dict[str, str | Path],
        suspect_cap_watts: float = DEFAULT_SUSPECT_CAP_WATTS,
        clock=time.monotonic_ns,
    ):
        if not domain_dirs:
            raise PowerSourceError("counter source needs at least one domain directory")
        self._clock = clock
        self.suspect_cap_watts = suspect_cap_watts
        self._dirs: dict[str, Path] = {}
        self._state: dict[str, EnergyCounterState] = {}
        for domain, d in domain_dirs.items():
            d = Path(d)
            for fname in ("energy_uj", "max_energy_range_uj"):
                if not (d / fname).exists():
                    raise PowerSourceError(f"{domain}: missing {d / fname}")
            self._dirs[domain] = d
        now = self._clock()
        for domain, d in self._dirs.items():
            raw = self._read_uj(domain, d / "energy_uj")
            wrap = self._read_uj(domain, d / "max_energy_range_uj")
            self._state[domain] = EnergyCounterState(raw % wrap, wrap, now)

    def _read_uj(self, domain: str, path: Path) -> float:
        try:
            return float(path.read_text().strip())
        except (OSError, ValueError) as exc:
            raise PowerSourceError(f"{domain}: cannot read {path}: {exc}") from exc

    @property
    def domains(self) -> list[str]:
        return list(self._dirs)

    def read(self) -> PowerSample:
        readings: dict[str, float] = {}
        suspect = False
        ts = 0
        # Fixed domain order; skew between domains within one sample is
        # accepted (the model treats the sample as a single instant).
        for domain, d in self._dirs.items():
            raw = self._read_uj(domain, d / "energy_uj")
            now = self._clock()
            prev = self._state[domain]
            if now <= prev.last_time_ns:  # stale clock; retry once
                now = self._clock()
            watts, state, bad = power_from_energy_delta(
                prev, raw, now, self.suspect_cap_watts
            )
            self._state[domain] = state
            readings[domain] = watts
            suspect = suspect or bad
            ts = now
        return PowerSample(ts, readings, suspect=suspect)

    def close(self) -> None:
        pass


class CounterTraceSource:
    """Replays recorded raw counter values (CSV `timestamp_ns,domain,energy_uj`)
    through the same delta-to-watts conversion as a live counter source."""

    def __init__(
        self,
        path: str | Path,
        wrap_range_uj: float,
        suspect_cap_watts: float = DEFAULT_SUSPECT_CAP_WATTS,
    ):
        self.path = Path(path)
        self.suspect_cap_watts = suspect_cap_watts
        rows = _read_csv_rows(self.path, "timestamp_ns,domain,energy_uj")
        self._groups = _group_by_timestamp(rows)
        self._state: dict[str, EnergyCounterState] = {}
        self._pos = 0
        if not self._groups:
            raise PowerSourceError(f"empty counter trace: {self.path}")
        # First timestamp group only seeds states.
        ts, first = self._groups[0]
        for domain, raw in first.items():
            self._state[domain] = EnergyCounterState(raw % wrap_range_uj, wrap_range_uj, ts)
        self._pos = 1

    @property
    def domains(self) -> list[str]:
        return list(self._state)

    def read(self) -> PowerSample:
        if self._pos >= len(self._groups):
            raise EndOfTrace(f"counter trace exhausted: {self.path}")
        ts, raws = self._groups[self._pos]
        self._pos += 1
        readings: dict[str, float] = {}
        suspect = False
        for domain, raw in raws.items():
            prev = self._state.get(domain)
            if prev is None:
                raise PowerSourceError(
                    f"{self.path}: domain {domain} appears mid-trace without seed row"
                )
            watts, state, bad = power_from_energy_delta(
                prev, raw, ts, self.suspect_cap_watts
            )
            self._state[domain] = state
            readings[domain] = watts
            suspect = suspect or bad
        return PowerSample(ts, readings, suspect=suspect)

    def close(self) -> None:
        pass


class MeterFileSource:
    """Direct power meters: per-domain file holding the device's
    period-averaged reading. `scale` converts file units to watts
    (1.0 for watts, 1e-6 for microwatt sysfs nodes)."""

    def __init__(
        self,
        domain_paths: dict[str, str | Path],
        scale: float = 1.0,
        clock=time.monotonic_ns,
    ):
        if not domain_paths:
            raise PowerSourceError("meter source needs at least one domain path")
        self.scale = scale
        self._clock = clock
        self._paths: dict[str, Path] = {}
        for domain, p in domain_paths.items():
            p = Path(p)
            if not p.exists():
                raise PowerSourceError(f"{domain}: meter path not found: {p}")
            self._paths[domain] = p

    @property
    def domains(self) -> list[str]:
        return list(self._paths)

    def read(self) -> PowerSample:
        readings: dict[str, float] = {}
        for domain, p in self._paths.items():
            try:
                readings[domain] = float(p.read_text().strip()) * self.scale
            except (OSError, ValueError) as exc:
                raise PowerSourceError(f"{domain}: cannot read {p}: {exc}") from exc
        return PowerSample(self._clock(), readings)

    def close(self) -> None:
        pass


def open_source(spec: str, **kwargs):
    """Open a power source from a descriptor string.

    Backends:
      mock:DOM=W[,DOM=W...]          constant synthetic readings
      replay:PATH                    recorded power trace (CSV)
      counters:DOM=DIR[,DOM=DIR...]  powercap-layout energy counters
      counter-trace:PATH@WRAP_UJ     recorded raw counter values
      meter:DOM=PATH[,...]           direct meter files (watts)
      meter-uw:DOM=PATH[,...]        direct meter files (microwatts)
    """
    backend, sep, rest = spec.partition(":")
    if not sep:
        raise PowerSourceError(f"malformed power-source spec: {spec!r}")
    if backend == "mock":
        return MockSource({k: float(v) for k, v in _parse_pairs(rest, spec)})
    if backend == "replay":
        return ReplaySource(rest)
    if backend == "counters":
        return CounterDirSource(dict(_parse_pairs(rest, spec)), **kwargs)
    if backend == "counter-trace":
        path, sep2, wrap = rest.partition("@")
        if not sep2:
            raise PowerSourceError(
                f"counter-trace needs explicit wrap range: {spec!r} (PATH@WRAP_UJ)"
            )
        return CounterTraceSource(path, float(wrap), **kwargs)
    if backend == "meter":
        return MeterFileSource(dict(_parse_pairs(rest, spec)), scale=1.0)
    if backend == "meter-uw":
        return MeterFileSource(dict(_parse_pairs(rest, spec)), scale=1e-6)
    raise PowerSourceError(f"unknown power-source backend: {backend!r}")


def _parse_pairs(rest: str, spec: str) -> list[tuple[str, str]]:
    pairs = []
    for item in rest.split(","):
        k, sep, v = item.partition("=")
        if not sep or not k:
            raise PowerSourceError(f"malformed power-source spec: {spec!r}")
        pairs.append((k, v))
    return pairs


# --- power trace file (CSV `timestamp_ns,domain,watts`) ---

def write_power_trace(path: str | Path, samples: Iterable[PowerSample]) -> None:
    with open(path, "w") as f:
        f.write(POWER_TRACE_HEADER + "\n")
        for s in samples:
            for domain, watts in s.readings.items():
                f.write(f"{s.timestamp_ns},{domain},{watts!r}\n")


def read_power_trace(path: str | Path) -> list[PowerSample]:
    rows = _read_csv_rows(Path(path), POWER_TRACE_HEADER)
    return [PowerSample(ts, readings) for ts, readings in _group_by_timestamp(rows)]


def _read_csv_rows(path: Path, expect_header: str) -> list[tuple[int, str, float]]:
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise PowerSourceError(f"cannot read {path}: {exc}") from exc
    if not lines or lines[0].strip() != expect_header:
        raise PowerSourceError(f"{path}:1: expected header {expect_header!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise PowerSourceError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
        try:
            rows.append((int(parts[0]), parts[1], float(parts[2])))
        except ValueError as exc:
            raise PowerSourceError(f"{path}:{lineno}: {exc}") from exc
    return rows


def _group_by_timestamp(
    rows: list[tuple[int, str, float]]
) -> list[tuple[int, dict[str, float]]]:
    groups: list[tuple[int, dict[str, float]]] = []
    for ts, domain, value in rows:
        if groups and groups[-1][0] == ts:
            groups[-1][1][domain] = value
        else:
            groups.append((ts, {domain: value}))
    return groups
