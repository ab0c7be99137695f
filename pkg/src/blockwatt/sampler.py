"""Control process: systematic sampling of a target's instruction pointers
and the power source.

One control thread owns the whole loop: at each scheduled instant it suspends
every target thread, reads each thread's instruction pointer, reads the power
source once, resumes the target, and emits one trace record. Scheduling is
absolute (computed from the start instant), so per-sample processing cost does
not drift the mean period. A deterministic trace replayer provides the same
record stream from a file.
"""

from __future__ import annotations

import os
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from blockwatt import _ptrace
from blockwatt._ptrace import TargetExited
from blockwatt.model import ABSENT, BlockKey, CombinationKey, SampleRecord
from blockwatt.power import EndOfTrace, PowerSample


class TraceFormatError(ValueError):
    """Malformed sample-trace line; message carries the line number."""


class AttachError(RuntimeError):
    """Cannot attach to the target (permissions, nonexistent pid, platform)."""


@dataclass(frozen=True)
class SamplerConfig:
    period_ms: float = 10.0
    jitter: bool = True  # off reproduces a strictly periodic schedule
    jitter_frac: float = 0.05  # uniform bound as a fraction of the period
    first_offset_ns: int | None = None  # None draws uniformly from one period
    cpu_affinity: int | None = None
    max_samples: int | None = None
    max_duration_s: float | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.period_ms <= 0:
            raise ValueError("period must be positive")
        if not 0 <= self.jitter_frac < 0.5:
            raise ValueError("jitter bound must be below period/2")

    @property
    def period_ns(self) -> int:
        return int(self.period_ms * 1e6)

    @property
    def jitter_ns(self) -> int:
        return int(self.jitter_frac * self.period_ns) if self.jitter else 0


@dataclass(frozen=True)
class TraceRecord:
    """One raw observation: per-thread (tid, instruction pointer) pairs plus
    the power reading, before address resolution."""

    seq: int
    wall_time_ns: int
    pairs: tuple[tuple[int, int], ...]
    power: PowerSample


@dataclass
class SamplerReport:
    t_exec_s: float
    n: int
    cumulative_stop_ns: int
    suspect_count: int
    target_exited: bool
    partial: bool = False
    # realized |actual - scheduled| offsets, OS noise + intentional jitter
    mean_abs_offset_ns: float = 0.0
    max_abs_offset_ns: int = 0

    @property
    def overhead_fraction(self) -> float:
        return self.cumulative_stop_ns * 1e-9 / self.t_exec_s if self.t_exec_s else 0.0


class SystemClock:
    def now(self) -> int:
        return time.monotonic_ns()

    def sleep_until(self, t_ns: int) -> None:
        delta = t_ns - time.monotonic_ns()
        if delta > 0:
            time.sleep(delta * 1e-9)


class VirtualClock:
    """Deterministic clock for tests: sleeping jumps straight to the target."""

    def __init__(self, start_ns: int = 0):
        self._t = start_ns

    def now(self) -> int:
        return self._t

    def advance(self, ns: int) -> None:
        self._t += ns

    def sleep_until(self, t_ns: int) -> None:
        if t_ns > self._t:
            self._t = t_ns


class PtraceTarget:
    """A live process under control via the OS debugging interface."""

    def __init__(self, pid: int):
        if not _ptrace.is_supported():
            raise AttachError("live sampling is only supported on Linux x86-64")
        self.pid = pid
        self._stopped: dict[int, int] = {}  # tid -> signal to re-deliver
        self._seized: set[int] = set()
        # set when our waitpid reaps the main thread's exit (the ordinary
        # parent then only sees ECHILD); negative means killed by a signal
        self.exit_status: int | None = None
        # scanning /proc/pid/task costs real time on every sample; rescan
        # only every few stops (or after a thread disappears mid-stop)
        self._refresh_every = 32
        self._stops_since_refresh = 0
        try:
            tids = _ptrace.list_tids(pid)
        except TargetExited:
            raise AttachError(f"no such process: {pid}") from None
        try:
            for tid in tids:
                _ptrace.seize(tid)
                self._seized.add(tid)
        except _ptrace.PtraceError as exc:
            self.detach()
            raise AttachError(f"cannot attach to {pid}: {exc}") from exc

    @property
    def alive(self) -> bool:
        try:
            _ptrace.list_tids(self.pid)
            return True
        except TargetExited:
            return False

    def _refresh_threads(self) -> list[int]:
        tids = _ptrace.list_tids(self.pid)  # raises TargetExited when gone
        for tid in tids:
            if tid not in self._seized:
                try:
                    _ptrace.seize(tid)
                    self._seized.add(tid)
                except _ptrace.PtraceError:
                    pass  # raced with thread exit
        self._seized.intersection_update(tids)
        return [t for t in tids if t in self._seized]

    def stop_all(self) -> list[tuple[int, int]]:
        """Suspend every live thread and read its instruction pointer."""
        if self._stops_since_refresh == 0 or not self._seized:
            tids = self._refresh_threads()
        else:
            tids = sorted(self._seized)
        self._stops_since_refresh = (
            self._stops_since_refresh + 1
        ) % self._refresh_every
        pairs = []
        for tid in tids:
            sig = _ptrace.interrupt_and_wait(tid, self._note_exit(tid))
            if sig is None:
                self._seized.discard(tid)
                self._stops_since_refresh = 0  # recheck /proc next stop
                continue  # thread exited mid-stop
            self._stopped[tid] = sig
            try:
                pairs.append((tid, _ptrace.read_ip(tid)))
            except _ptrace.PtraceError:
                pass
        if not pairs and not self.alive:
            raise TargetExited(self.pid)
        return pairs

    def _note_exit(self, tid: int):
        def note(raw_status: int) -> None:
            if tid == self.pid:
                self.exit_status = os.waitstatus_to_exitcode(raw_status)

        return note

    def resume_all(self) -> None:
        for tid, sig in self._stopped.items():
            _ptrace.resume(tid, sig)
        self._stopped.clear()

    def detach(self) -> None:
        """Leave the target running (or dead); safe on every exit path."""
        for tid in list(self._stopped):
            _ptrace.detach_stopped(tid)
            self._seized.discard(tid)
        self._stopped.clear()
        for tid in list(self._seized):
            try:
                _ptrace.detach_running(tid)
            except _ptrace.PtraceError:
                pass
        self._seized.clear()


class MockTarget:
    """Scripted target for tests: instruction pointers come from a callable
    of the current clock time; dies after `lifetime_ns`."""

    def __init__(self, clock, ip_fn: Callable[[int], Sequence[tuple[int, int]]],
                 lifetime_ns: int, stop_cost_ns: int = 0):
        self._clock = clock
        self._ip_fn = ip_fn
        self._deadline = clock.now() + lifetime_ns
        self._stop_cost_ns = stop_cost_ns

    @property
    def alive(self) -> bool:
        return self._clock.now() < self._deadline

    def stop_all(self) -> list[tuple[int, int]]:
        if not self.alive:
            raise TargetExited(0)
        if self._stop_cost_ns and isinstance(self._clock, VirtualClock):
            self._clock.advance(self._stop_cost_ns)
        return list(self._ip_fn(self._clock.now()))

    def resume_all(self) -> None:
        pass

    def detach(self) -> None:
        pass


def attach(pid: int) -> PtraceTarget:
    return PtraceTarget(pid)


def sample_once(target, source) -> TraceRecord:
    """One suspend-read-resume cycle; power is read after all instruction
    pointers so the counter-delta interval aligns with the sampling interval."""
    pairs = tuple(target.stop_all())
    try:
        power = source.read()
    finally:
        target.resume_all()
    return TraceRecord(0, 0, pairs, power)


def run_systematic(
    target,
    config: SamplerConfig,
    source,
    sink: Callable[[TraceRecord], None],
    clock=None,
) -> SamplerReport:
    """Systematic sampling loop: instants are start + first_offset + i*period
    (+ per-sample jitter when enabled), with the first offset drawn uniformly
    from one period."""
    clock = clock or SystemClock()
    if config.cpu_affinity is not None:
        os.sched_setaffinity(0, {config.cpu_affinity})
    rng = random.Random(config.seed)
    period = config.period_ns
    jitter = config.jitter_ns
    first_offset = config.first_offset_ns
    if first_offset is None:
        first_offset = rng.randrange(period)

    t0 = clock.now()
    n = 0
    stop_ns = 0
    suspect = 0
    abs_offsets: list[int] = []
    exited = False
    partial = False
    try:
        while True:
            if config.max_samples is not None and n >= config.max_samples:
                break
            scheduled = t0 + first_offset + n * period
            if jitter:
                scheduled += rng.randint(-jitter, jitter)
            if (
                config.max_duration_s is not None
                and scheduled - t0 > config.max_duration_s * 1e9
            ):
                break
            clock.sleep_until(scheduled)
            t_stop = clock.now()
            try:
                pairs = tuple(target.stop_all())
            except TargetExited:
                exited = True
                break
            try:
                power = source.read()
            except EndOfTrace:
                break
            finally:
                target.resume_all()
            t_resume = clock.now()
            stop_ns += t_resume - t_stop
            abs_offsets.append(abs(t_stop - scheduled))
            if power.suspect:
                suspect += 1
            try:
                sink(TraceRecord(n, t_stop - t0, pairs, power))
            except OSError:
                partial = True
                break
            n += 1
    finally:
        target.detach()
    t_exec = (clock.now() - t0) * 1e-9
    return SamplerReport(
        t_exec_s=t_exec,
        n=n,
        cumulative_stop_ns=stop_ns,
        suspect_count=suspect,
        target_exited=exited,
        partial=partial,
        mean_abs_offset_ns=(sum(abs_offsets) / len(abs_offsets)) if abs_offsets else 0.0,
        max_abs_offset_ns=max(abs_offsets, default=0),
    )


# --- sample-trace file format ---
# One record per line:
#   seq,wall_time_ns,tid:ip_hex[;tid:ip_hex...],domain=watts[;domain=watts...]

def format_trace_record(rec: TraceRecord) -> str:
    pairs = ";".join(f"{tid}:{ip:x}" for tid, ip in rec.pairs)
    readings = ";".join(f"{d}={w!r}" for d, w in rec.power.readings.items())
    return f"{rec.seq},{rec.wall_time_ns},{pairs},{readings}"


def write_trace(path: str | Path, records: Iterable[TraceRecord]) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(format_trace_record(rec) + "\n")


def parse_trace_line(line: str, lineno: int = 0) -> TraceRecord:
    parts = line.split(",")
    if len(parts) != 4:
        raise TraceFormatError(f"line {lineno}: expected 4 fields, got {len(parts)}")
    try:
        seq = int(parts[0])
        wall = int(parts[1])
        pairs = tuple(
            (int(t), int(ip, 16))
            for t, ip in (item.split(":") for item in parts[2].split(";") if item)
        )
        readings = {}
        for item in parts[3].split(";"):
            if not item:
                continue
            domain, _, watts = item.partition("=")
            readings[domain] = float(watts)
    except (ValueError, TypeError) as exc:
        raise TraceFormatError(f"line {lineno}: {exc}") from exc
    if not pairs:
        raise TraceFormatError(f"line {lineno}: no thread samples")
    return TraceRecord(seq, wall, pairs, PowerSample(wall, readings))


def replay(trace_path: str | Path) -> list[TraceRecord]:
    """Deterministic re-read of a recorded trace, in file order."""
    path = Path(trace_path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise TraceFormatError(f"cannot read trace {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        records.append(parse_trace_line(line, lineno))
    if not records:
        raise TraceFormatError(f"{path}: empty trace")
    return records


def resolve_trace(
    records: Sequence[TraceRecord],
    resolve: Callable[[int], BlockKey],
    suspect_cap_watts: float | None = None,
) -> tuple[list[SampleRecord], int, int]:
    """Turn raw trace records into fixed-length combination samples.

    Thread slots are assigned by order of first appearance over the whole
    trace (two passes), so every sample's key has the same length; slots whose
    thread is missing at a sample read ABSENT. Records with any domain reading
    above the suspect cap are excluded and counted. Returns
    (samples, slot_count, suspect_count).
    """
    slot_of: dict[int, int] = {}
    for rec in records:
        for tid, _ in rec.pairs:
            slot_of.setdefault(tid, len(slot_of))
    slots = len(slot_of)
    samples = []
    suspect = 0
    for rec in records:
        if suspect_cap_watts is not None and (
            rec.power.suspect
            or any(w > suspect_cap_watts for w in rec.power.readings.values())
        ):
            suspect += 1
            continue
        blocks = [ABSENT] * slots
        for tid, ip in rec.pairs:
            blocks[slot_of[tid]] = resolve(ip)
        samples.append(
            SampleRecord(rec.seq, rec.wall_time_ns, CombinationKey(tuple(blocks)), rec.power)
        )
    return samples, slots, suspect
