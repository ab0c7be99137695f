"""Synthetic workloads and brute-force ground truth.

Generates tick-exact timelines of block executions with configurable latency
and power distributions, samples them systematically (with optional jitter),
and computes exact per-block totals by summation over segments. This is the
oracle against which the statistical estimators are validated, at desk scale,
without hardware.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from blockwatt import blockmap as bm
from blockwatt.model import (
    ABSENT,
    BlockKey,
    CombinationKey,
    ConfidenceSpec,
    Profile,
    SampleRecord,
    build_profile,
)
from blockwatt.power import PKG, PowerSample

DEFAULT_TICK_HZ = 1_000_000  # 1 tick = 1 us

SIM_MODULE = "sim"
# Synthetic address layout: block i owns [BLOCK_STRIDE*(i+1), +BLOCK_SIZE).
BLOCK_STRIDE = 0x1000
BLOCK_SIZE = 0x100


class ScenarioError(ValueError):
    """Malformed scenario file."""


@dataclass(frozen=True)
class LatencyDist:
    """Per-iteration block latency in ticks."""

    kind: Literal["constant", "uniform", "two_point"]
    a: int
    b: int = 0
    p_a: float = 0.5

    def __post_init__(self) -> None:
        if self.a < 1 or (self.kind != "constant" and self.b < 1):
            raise ValueError("latencies must be >= 1 tick")

    def draw(self, rng: np.random.Generator, k: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(k, self.a, dtype=np.int64)
        if self.kind == "uniform":
            return rng.integers(self.a, self.b + 1, size=k, dtype=np.int64)
        if self.kind == "two_point":
            pick = rng.random(k) < self.p_a
            return np.where(pick, self.a, self.b).astype(np.int64)
        raise ValueError(f"unknown latency kind {self.kind!r}")

    @property
    def mean(self) -> float:
        if self.kind == "constant":
            return float(self.a)
        if self.kind == "uniform":
            return (self.a + self.b) / 2.0
        return self.p_a * self.a + (1.0 - self.p_a) * self.b


@dataclass(frozen=True)
class PowerDist:
    """Per-visit block power in watts; gaussian draws are truncated at 0."""

    kind: Literal["constant", "gaussian"]
    mean: float
    std: float = 0.0

    def draw(self, rng: np.random.Generator, k: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(k, self.mean, dtype=np.float64)
        if self.kind == "gaussian":
            return np.clip(rng.normal(self.mean, self.std, size=k), 0.0, None)
        raise ValueError(f"unknown power kind {self.kind!r}")


@dataclass(frozen=True)
class SyntheticBlockSpec:
    key: BlockKey
    latency: LatencyDist
    power: PowerDist
    iterations: int

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


class Timeline:
    """Contiguous, non-overlapping block segments covering [0, total_ticks)."""

    def __init__(
        self,
        keys: Sequence[BlockKey],
        seg_key: np.ndarray,
        seg_len: np.ndarray,
        seg_power: np.ndarray,
        tick_hz: int = DEFAULT_TICK_HZ,
    ):
        self.keys = list(keys)
        self.seg_key = np.asarray(seg_key, dtype=np.int64)
        self.seg_len = np.asarray(seg_len, dtype=np.int64)
        self.seg_power = np.asarray(seg_power, dtype=np.float64)
        self.seg_end = np.cumsum(self.seg_len)
        self.tick_hz = tick_hz
        if len(self.seg_key) == 0:
            raise ValueError("empty timeline")
        if (self.seg_len < 1).any():
            raise ValueError("zero-length segment")

    @property
    def total_ticks(self) -> int:
        return int(self.seg_end[-1])

    @property
    def seg_start(self) -> np.ndarray:
        return self.seg_end - self.seg_len

    def key_at(self, tick: int) -> BlockKey:
        i = int(np.searchsorted(self.seg_end, tick, side="right"))
        if not 0 <= tick < self.total_ticks:
            raise IndexError(f"tick {tick} outside [0, {self.total_ticks})")
        return self.keys[self.seg_key[i]]


@dataclass(frozen=True)
class KeyTruth:
    t_s: float
    p: float
    mean_watts: float
    energy_j: float


@dataclass(frozen=True)
class GroundTruth:
    per_key: dict
    t_exec_s: float
    e_total_j: float


def generate_timeline(
    program: Sequence[SyntheticBlockSpec],
    schedule: Literal["round_robin", "sequential"] = "round_robin",
    seed: int = 0,
    tick_hz: int = DEFAULT_TICK_HZ,
) -> Timeline:
    """Deterministic (given seed) interleaving of every block's iterations.

    Round-robin plays iteration j of each still-unfinished block in turn;
    sequential plays each block's iterations back to back.
    """
    if not program:
        raise ValueError("empty program")
    rng = np.random.default_rng(seed)
    keys = [spec.key for spec in program]
    lat_parts, pow_parts, id_parts, round_parts = [], [], [], []
    for i, spec in enumerate(program):
        k = spec.iterations
        lat_parts.append(spec.latency.draw(rng, k))
        pow_parts.append(spec.power.draw(rng, k))
        id_parts.append(np.full(k, i, dtype=np.int64))
        round_parts.append(np.arange(k, dtype=np.int64))
    seg_key = np.concatenate(id_parts)
    seg_len = np.concatenate(lat_parts)
    seg_power = np.concatenate(pow_parts)
    if schedule == "round_robin":
        order = np.lexsort((seg_key, np.concatenate(round_parts)))
        seg_key, seg_len, seg_power = seg_key[order], seg_len[order], seg_power[order]
    elif schedule != "sequential":
        raise ValueError(f"unknown schedule {schedule!r}")
    return Timeline(keys, seg_key, seg_len, seg_power, tick_hz)


def true_totals(timeline: Timeline) -> GroundTruth:
    """Exact per-key time/power/energy by summation over all segments."""
    total = timeline.total_ticks
    per_key = {}
    for i, key in enumerate(timeline.keys):
        mask = timeline.seg_key == i
        ticks = int(timeline.seg_len[mask].sum())
        if ticks == 0:
            continue
        energy_ticks = float((timeline.seg_len[mask] * timeline.seg_power[mask]).sum())
        t_s = ticks / timeline.tick_hz
        per_key[key] = KeyTruth(
            t_s=t_s,
            p=ticks / total,
            mean_watts=energy_ticks / ticks,
            energy_j=energy_ticks / timeline.tick_hz,
        )
    e_total = math.fsum(v.energy_j for v in per_key.values())
    return GroundTruth(per_key, total / timeline.tick_hz, e_total)


def _sample_ticks(
    total_ticks: int,
    period_ticks: int,
    jitter_ticks: int,
    first_offset: int | None,
    rng: np.random.Generator,
) -> np.ndarray:
    if period_ticks < 1:
        raise ValueError("period must be >= 1 tick")
    if jitter_ticks < 0 or (jitter_ticks and jitter_ticks >= period_ticks / 2):
        raise ValueError("jitter bound must lie in [0, period/2)")
    if first_offset is None:
        first_offset = int(rng.integers(0, period_ticks))
    m = (total_ticks - first_offset + period_ticks - 1) // period_ticks
    ticks = first_offset + np.arange(m, dtype=np.int64) * period_ticks
    if jitter_ticks:
        ticks = ticks + rng.integers(-jitter_ticks, jitter_ticks + 1, size=m)
    return np.clip(ticks, 0, total_ticks - 1)


def _power_at(timeline: Timeline, ticks: np.ndarray, window: int) -> np.ndarray:
    idx = np.searchsorted(timeline.seg_end, ticks, side="right")
    if window <= 0:
        return timeline.seg_power[idx]
    # Trailing-window mean power, as an energy-counter sensor would report:
    # (E(t+1) - E(t+1-w)) / w from the exact cumulative-energy staircase.
    e_prefix = np.concatenate(
        ([0.0], np.cumsum(timeline.seg_len * timeline.seg_power))
    )
    starts = timeline.seg_start

    def energy_at(t: np.ndarray) -> np.ndarray:
        t = np.clip(t, 0, timeline.total_ticks)
        i = np.searchsorted(timeline.seg_end, t, side="right")
        i = np.minimum(i, len(starts) - 1)
        return e_prefix[i] + timeline.seg_power[i] * (t - starts[i])

    hi = ticks + 1
    lo = np.maximum(hi - window, 0)
    return (energy_at(hi) - energy_at(lo)) / (hi - lo)


def sample_timeline(
    timeline: Timeline,
    period_ticks: int,
    jitter_ticks: int = 0,
    first_offset: int | None = None,
    seed: int = 0,
    power_window_ticks: int = 0,
) -> list[SampleRecord]:
    """Systematic sampling of a single-thread timeline: one record per
    scheduled tick carrying the covering block and its power."""
    rng = np.random.default_rng(seed)
    ticks = _sample_ticks(
        timeline.total_ticks, period_ticks, jitter_ticks, first_offset, rng
    )
    idx = np.searchsorted(timeline.seg_end, ticks, side="right")
    watts = _power_at(timeline, ticks, power_window_ticks)
    key_idx = timeline.seg_key[idx]
    ns_per_tick = 1e9 / timeline.tick_hz
    records = []
    for seq, (tick, ki, w) in enumerate(zip(ticks, key_idx, watts)):
        ts = int(tick * ns_per_tick)
        records.append(
            SampleRecord(
                seq=seq,
                wall_time_ns=ts,
                key=CombinationKey.single(timeline.keys[ki]),
                power=PowerSample(ts, {PKG: float(w)}),
            )
        )
    return records


def sample_timeline_random(
    timeline: Timeline,
    n: int,
    seed: int = 0,
    power_window_ticks: int = 0,
) -> list[SampleRecord]:
    """Uniform random sampling of n ticks (sorted), the idealized regime the
    confidence intervals assume; systematic sampling only approximates it."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    ticks = np.sort(rng.integers(0, timeline.total_ticks, size=n))
    idx = np.searchsorted(timeline.seg_end, ticks, side="right")
    watts = _power_at(timeline, ticks, power_window_ticks)
    key_idx = timeline.seg_key[idx]
    ns_per_tick = 1e9 / timeline.tick_hz
    records = []
    for seq, (tick, ki, w) in enumerate(zip(ticks, key_idx, watts)):
        ts = int(tick * ns_per_tick)
        records.append(
            SampleRecord(
                seq=seq,
                wall_time_ns=ts,
                key=CombinationKey.single(timeline.keys[ki]),
                power=PowerSample(ts, {PKG: float(w)}),
            )
        )
    return records


def sample_timelines(
    timelines: Sequence[Timeline],
    period_ticks: int,
    jitter_ticks: int = 0,
    first_offset: int | None = None,
    seed: int = 0,
) -> list[SampleRecord]:
    """Sample all thread-slot timelines at the same ticks, emitting
    combination keys and one shared power reading (sum across slots).
    Slots past the end of their timeline read as absent with zero power."""
    if not timelines:
        raise ValueError("no timelines")
    tick_hz = timelines[0].tick_hz
    if any(t.tick_hz != tick_hz for t in timelines):
        raise ValueError("timelines disagree on tick_hz")
    total = max(t.total_ticks for t in timelines)
    rng = np.random.default_rng(seed)
    ticks = _sample_ticks(total, period_ticks, jitter_ticks, first_offset, rng)
    per_slot_keys, per_slot_watts = [], []
    for tl in timelines:
        idx = np.searchsorted(tl.seg_end, ticks, side="right")
        alive = ticks < tl.total_ticks
        idx = np.minimum(idx, len(tl.seg_key) - 1)
        per_slot_keys.append((tl, idx, alive))
        per_slot_watts.append(np.where(alive, tl.seg_power[idx], 0.0))
    watts = np.sum(per_slot_watts, axis=0)
    ns_per_tick = 1e9 / tick_hz
    records = []
    for seq, tick in enumerate(ticks):
        blocks = tuple(
            tl.keys[tl.seg_key[idx[seq]]] if alive[seq] else ABSENT
            for tl, idx, alive in per_slot_keys
        )
        ts = int(tick * ns_per_tick)
        records.append(
            SampleRecord(
                seq=seq,
                wall_time_ns=ts,
                key=CombinationKey(blocks),
                power=PowerSample(ts, {PKG: float(watts[seq])}),
            )
        )
    return records


def combination_truth(timelines: Sequence[Timeline]) -> GroundTruth:
    """Exact per-combination totals by sweeping the merged segment
    boundaries of all slot timelines."""
    if not timelines:
        raise ValueError("no timelines")
    tick_hz = timelines[0].tick_hz
    total = max(t.total_ticks for t in timelines)
    bounds = np.unique(
        np.concatenate([t.seg_end for t in timelines] + [np.array([0, total])])
    )
    bounds = bounds[bounds <= total]
    starts, ends = bounds[:-1], bounds[1:]
    lens = ends - starts
    slot_keys, slot_watts = [], []
    for tl in timelines:
        idx = np.searchsorted(tl.seg_end, starts, side="right")
        alive = starts < tl.total_ticks
        idx = np.minimum(idx, len(tl.seg_key) - 1)
        slot_keys.append([
            tl.keys[tl.seg_key[i]] if a else ABSENT for i, a in zip(idx, alive)
        ])
        slot_watts.append(np.where(alive, tl.seg_power[idx], 0.0))
    watts = np.sum(slot_watts, axis=0)
    acc_ticks: dict[CombinationKey, int] = {}
    acc_energy: dict[CombinationKey, float] = {}
    for j in range(len(starts)):
        comb = CombinationKey(tuple(sk[j] for sk in slot_keys))
        acc_ticks[comb] = acc_ticks.get(comb, 0) + int(lens[j])
        acc_energy[comb] = acc_energy.get(comb, 0.0) + float(watts[j] * lens[j])
    per_key = {}
    for comb, ticks in acc_ticks.items():
        per_key[comb] = KeyTruth(
            t_s=ticks / tick_hz,
            p=ticks / total,
            mean_watts=acc_energy[comb] / ticks,
            energy_j=acc_energy[comb] / tick_hz,
        )
    e_total = math.fsum(v.energy_j for v in per_key.values())
    return GroundTruth(per_key, total / tick_hz, e_total)


@dataclass(frozen=True)
class KeyErrors:
    rel_t: float
    rel_pow: float
    rel_e: float
    p_covered: bool
    pow_covered: bool
    e_covered: bool
    ci_valid: bool
    pow_ci_computable: bool


@dataclass(frozen=True)
class ErrorReport:
    per_key: dict
    mare_t: float
    mare_pow: float
    mare_e: float

    def mare_e_subset(self, keys) -> float:
        errs = [self.per_key[k].rel_e for k in keys if k in self.per_key]
        if not errs:
            raise ValueError("no matching keys")
        return math.fsum(errs) / len(errs)


def evaluate(profile: Profile, truth: GroundTruth) -> ErrorReport:
    """Per-key and mean absolute relative errors against ground truth, plus
    CI coverage indicators. Unknown keys are excluded; disjoint key sets are
    an error."""
    per_key = {}
    for key, t in truth.per_key.items():
        comb = key if isinstance(key, CombinationKey) else CombinationKey.single(key)
        if any(b.is_unknown for b in comb.blocks):
            continue
        est = profile.estimates.get(comb)
        if est is None:
            continue
        per_key[key] = KeyErrors(
            rel_t=abs(est.t_hat - t.t_s) / t.t_s,
            rel_pow=abs(est.pow_hat - t.mean_watts) / t.mean_watts,
            rel_e=abs(est.e_hat - t.energy_j) / t.energy_j,
            p_covered=est.p_ci[0] <= t.p <= est.p_ci[1],
            pow_covered=est.pow_ci[0] <= t.mean_watts <= est.pow_ci[1],
            e_covered=est.e_ci[0] <= t.energy_j <= est.e_ci[1],
            ci_valid=est.ci_valid,
            pow_ci_computable=est.pow_ci_computable,
        )
    if not per_key:
        raise ValueError("profile and ground truth share no keys")
    n = len(per_key)
    return ErrorReport(
        per_key=per_key,
        mare_t=math.fsum(e.rel_t for e in per_key.values()) / n,
        mare_pow=math.fsum(e.rel_pow for e in per_key.values()) / n,
        mare_e=math.fsum(e.rel_e for e in per_key.values()) / n,
    )


# --- scenario files ---

@dataclass(frozen=True)
class Scenario:
    threads: tuple[tuple[SyntheticBlockSpec, ...], ...]
    schedule: str
    tick_hz: int
    period_ticks: int
    jitter_ticks: int
    seed: int
    alpha: float
    power_window_ticks: int = 0

    @property
    def single_thread(self) -> bool:
        return len(self.threads) == 1


def _parse_block(b: dict, i: int) -> SyntheticBlockSpec:
    try:
        lat = b["latency"]
        pw = b["power"]
        latency = LatencyDist(
            lat["kind"],
            int(lat.get("ticks", lat.get("a", 0))),
            int(lat.get("b", 0)),
            float(lat.get("p_a", 0.5)),
        )
        power = PowerDist(
            pw["kind"], float(pw.get("watts", pw.get("mean", 0.0))),
            float(pw.get("std", 0.0)),
        )
        return SyntheticBlockSpec(
            key=BlockKey(b.get("module", SIM_MODULE), b["block"]),
            latency=latency,
            power=power,
            iterations=int(b["iterations"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"blocks[{i}]: {exc}") from exc


def load_scenario(path: str | Path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if "threads" in doc:
        thread_docs = doc["threads"]
    elif "blocks" in doc:
        thread_docs = [doc["blocks"]]
    else:
        raise ScenarioError(f"{path}: scenario needs 'blocks' or 'threads'")
    if not thread_docs or any(not t for t in thread_docs):
        raise ScenarioError(f"{path}: empty block list")
    threads = tuple(
        tuple(_parse_block(b, i) for i, b in enumerate(blocks))
        for blocks in thread_docs
    )
    return Scenario(
        threads=threads,
        schedule=doc.get("schedule", "round_robin"),
        tick_hz=int(doc.get("tick_hz", DEFAULT_TICK_HZ)),
        period_ticks=int(doc.get("period_ticks", 10_000)),
        jitter_ticks=int(doc.get("jitter_ticks", 0)),
        seed=int(doc.get("seed", 0)),
        alpha=float(doc.get("alpha", 0.05)),
        power_window_ticks=int(doc.get("power_window_ticks", 0)),
    )


@dataclass(frozen=True)
class ReplicationSummary:
    """Aggregate over R independent simulate-estimate-evaluate replications."""

    replications: int
    n_samples: int
    mare_t: float
    mare_e: float
    mare_pow: float
    p_coverage: float
    pow_coverage: float
    e_coverage: float
    n_valid_pairs: int
    per_key_mare_e: dict


def run_replications(
    scenario: Scenario,
    replications: int,
    granularity: str = "combination",
) -> ReplicationSummary:
    """Run the full pipeline (generate, sample, estimate, evaluate) R times
    with distinct seeds and aggregate errors and CI coverage."""
    if replications < 1:
        raise ValueError("need at least one replication")
    spec = ConfidenceSpec.from_alpha(scenario.alpha)
    mares_t, mares_e, mares_pow = [], [], []
    cov_p = cov_pow = cov_e = valid_pairs = 0
    key_err_sum: dict = {}
    n_samples = 0
    for r in range(replications):
        seed = scenario.seed + r
        if scenario.single_thread:
            tl = generate_timeline(
                scenario.threads[0], scenario.schedule, seed, scenario.tick_hz
            )
            truth = true_totals(tl)
            records = sample_timeline(
                tl,
                scenario.period_ticks,
                scenario.jitter_ticks,
                first_offset=None,
                seed=seed,
                power_window_ticks=scenario.power_window_ticks,
            )
            gran = "block"
        else:
            tls = [
                generate_timeline(t, scenario.schedule, seed + 1000 * i, scenario.tick_hz)
                for i, t in enumerate(scenario.threads)
            ]
            truth = combination_truth(tls)
            records = sample_timelines(
                tls, scenario.period_ticks, scenario.jitter_ticks, None, seed
            )
            gran = granularity
        profile = build_profile(records, truth.t_exec_s, spec, gran)
        report = evaluate(profile, truth)
        n_samples = profile.n
        mares_t.append(report.mare_t)
        mares_e.append(report.mare_e)
        mares_pow.append(report.mare_pow)
        for key, err in report.per_key.items():
            key_err_sum.setdefault(key, []).append(err.rel_e)
            if err.ci_valid:
                valid_pairs += 1
                cov_p += err.p_covered
                cov_e += err.e_covered
                if err.pow_ci_computable:
                    cov_pow += err.pow_covered
    return ReplicationSummary(
        replications=replications,
        n_samples=n_samples,
        mare_t=math.fsum(mares_t) / replications,
        mare_e=math.fsum(mares_e) / replications,
        mare_pow=math.fsum(mares_pow) / replications,
        p_coverage=cov_p / valid_pairs if valid_pairs else float("nan"),
        pow_coverage=cov_pow / valid_pairs if valid_pairs else float("nan"),
        e_coverage=cov_e / valid_pairs if valid_pairs else float("nan"),
        n_valid_pairs=valid_pairs,
        per_key_mare_e={
            k: math.fsum(v) / len(v) for k, v in key_err_sum.items()
        },
    )


# --- bridging sim output to the profiler's external formats ---

def block_address(block_index: int) -> int:
    """Synthetic link-time address for block i; used when emitting sim
    samples in the on-disk trace format."""
    return BLOCK_STRIDE * (block_index + 1)


def make_blockmap(program: Sequence[SyntheticBlockSpec]) -> bm.BlockMap:
    """Block map matching the synthetic address layout of `block_address`."""
    descriptors = [
        bm.BlockDescriptor(
            key=spec.key,
            ranges=(bm.AddressRange(block_address(i), block_address(i) + BLOCK_SIZE),),
            label=spec.key.block_id,
        )
        for i, spec in enumerate(program)
    ]
    return bm.BlockMap(SIM_MODULE, descriptors)


def records_to_raw(
    records: Sequence[SampleRecord], program: Sequence[SyntheticBlockSpec]
):
    """Convert sim sample records to raw (tid, ip) trace records so the
    replay pipeline can consume simulator output unchanged."""
    from blockwatt.sampler import TraceRecord

    addr = {spec.key: block_address(i) for i, spec in enumerate(program)}
    raws = []
    for rec in records:
        pairs = tuple(
            (tid, addr[b]) for tid, b in enumerate(rec.key.blocks) if not b.is_absent
        )
        raws.append(
            TraceRecord(rec.seq, rec.wall_time_ns, pairs, rec.power)
        )
    return raws
