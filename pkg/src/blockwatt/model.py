"""Statistical core: proportion/time/power/energy estimators and their
confidence intervals, aggregated into a per-block or per-combination profile.

Time attribution treats sampled instants as draws from the run's tick
population: a block's estimated time share is its sample share. Power samples
taken while a block was executing estimate its mean power; energy is the
product of the two. All intervals are normal-approximation intervals; the
proportion interval carries a validity flag for the small-count regime.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Iterable, Literal, NamedTuple, Sequence

from blockwatt.power import PowerSample

UNKNOWN_BLOCK_ID = "[unknown]"
ABSENT_BLOCK_ID = "[absent]"

# Normal approximation for a proportion is sound only when both expected
# counts exceed this.
WALD_VALIDITY_COUNT = 5.0


class EmptyStreamError(ValueError):
    """No samples to aggregate."""


class MalformedStreamError(ValueError):
    """Sample stream violates structural invariants (e.g. mixed key lengths)."""


@dataclass(frozen=True)
class BlockKey:
    """Identity of one basic block: loaded module + block within its map."""

    module_id: str
    block_id: str

    @classmethod
    def unknown(cls, module_id: str = "") -> "BlockKey":
        """Pseudo-key for addresses that resolve to no mapped block."""
        return cls(module_id, UNKNOWN_BLOCK_ID)

    @property
    def is_unknown(self) -> bool:
        return self.block_id == UNKNOWN_BLOCK_ID

    @property
    def is_absent(self) -> bool:
        return self.block_id == ABSENT_BLOCK_ID

    def __str__(self) -> str:
        return f"{self.module_id}:{self.block_id}" if self.module_id else self.block_id


# Sentinel for a thread slot whose thread no longer existed at sample time.
ABSENT = BlockKey("", ABSENT_BLOCK_ID)


@dataclass(frozen=True)
class CombinationKey:
    """Ordered tuple of blocks sampled simultaneously, one per thread slot."""

    blocks: tuple[BlockKey, ...]

    @classmethod
    def single(cls, block: BlockKey) -> "CombinationKey":
        return cls((block,))

    def __len__(self) -> int:
        return len(self.blocks)

    def __str__(self) -> str:
        return "|".join(str(b) for b in self.blocks)


@dataclass(frozen=True)
class SampleRecord:
    """One synchronized observation: block combination + power reading."""

    seq: int
    wall_time_ns: int
    key: CombinationKey
    power: PowerSample


def normal_quantile(alpha: float) -> float:
    """Two-sided standard-normal quantile: the 1 - alpha/2 percentile."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    return statistics.NormalDist().inv_cdf(1.0 - alpha / 2.0)


@dataclass(frozen=True)
class ConfidenceSpec:
    """Significance level and its precomputed two-sided normal quantile."""

    alpha: float
    z: float

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.z <= 0.0 or abs(self.z - normal_quantile(self.alpha)) > 1e-6:
            raise ValueError(f"z={self.z} inconsistent with alpha={self.alpha}")

    @classmethod
    def from_alpha(cls, alpha: float = 0.05) -> "ConfidenceSpec":
        return cls(alpha, normal_quantile(alpha))


class ProportionCI(NamedTuple):
    lower: float
    upper: float
    valid: bool


class PowerCI(NamedTuple):
    lower: float
    upper: float
    s: float | None  # corrected sample standard deviation; None if < 2 samples
    computable: bool


def estimate_proportion(n_k: int, n: int) -> float:
    """Share of samples that hit the key: the MLE of the sampling probability."""
    if n < 1:
        raise EmptyStreamError("cannot estimate a proportion from zero samples")
    if not 0 <= n_k <= n:
        raise ValueError(f"need 0 <= n_k <= n, got n_k={n_k}, n={n}")
    return n_k / n


def estimate_time(p_hat: float, t_exec: float) -> float:
    """Block time as its share of total measured execution time."""
    if not 0.0 <= p_hat <= 1.0:
        raise ValueError(f"proportion must be in [0, 1], got {p_hat}")
    if t_exec < 0.0:
        raise ValueError(f"t_exec must be >= 0, got {t_exec}")
    return p_hat * t_exec


def estimate_mean_power(power_samples: Sequence[float]) -> float:
    if not power_samples:
        raise EmptyStreamError("cannot estimate mean power from zero samples")
    return math.fsum(power_samples) / len(power_samples)


def estimate_energy(pow_hat: float, t_hat: float) -> float:
    if pow_hat < 0.0 or t_hat < 0.0:
        raise ValueError("power and time must be non-negative")
    return pow_hat * t_hat


def proportion_ci(p_hat: float, n: int, spec: ConfidenceSpec) -> ProportionCI:
    """Normal-approximation (Wald) interval for a proportion, clamped to [0, 1].

    `valid` is False when either expected count n*p or n*(1-p) is too small
    for the approximation; the clamped interval is still returned.
    """
    if n < 1:
        raise EmptyStreamError("proportion CI needs at least one sample")
    half = spec.z * math.sqrt(p_hat * (1.0 - p_hat) / n)
    valid = n * p_hat > WALD_VALIDITY_COUNT and n * (1.0 - p_hat) > WALD_VALIDITY_COUNT
    return ProportionCI(max(0.0, p_hat - half), min(1.0, p_hat + half), valid)


def power_ci(power_samples: Sequence[float], spec: ConfidenceSpec) -> PowerCI:
    """Mean-power interval from the corrected (n-1 divisor) sample standard
    deviation. With fewer than 2 samples the interval degenerates to a point
    and is flagged not-computable. The lower bound is clamped at zero when
    all samples are non-negative (watts cannot be negative)."""
    if not power_samples:
        raise EmptyStreamError("power CI needs at least one sample")
    mean = estimate_mean_power(power_samples)
    if len(power_samples) < 2:
        return PowerCI(mean, mean, None, False)
    s = math.sqrt(
        math.fsum((x - mean) ** 2 for x in power_samples) / (len(power_samples) - 1)
    )
    half = spec.z * s / math.sqrt(len(power_samples))
    lower = mean - half
    if lower < 0.0 and min(power_samples) >= 0.0:
        lower = 0.0
    return PowerCI(lower, mean + half, s, True)


def energy_ci(
    p_ci: tuple[float, float], t_exec: float, pow_ci: tuple[float, float]
) -> tuple[float, float]:
    """Energy bounds as the product of the proportion and power bounds with
    total execution time. Note: multiplying two 1-alpha intervals does not
    yield an exact 1-alpha interval; the joint level is merely close."""
    for lo, up in (p_ci, pow_ci):
        if lo > up:
            raise ValueError(f"malformed interval ({lo}, {up})")
        if lo < 0.0:
            raise ValueError(f"negative interval bound {lo}")
    if t_exec < 0.0:
        raise ValueError(f"t_exec must be >= 0, got {t_exec}")
    return (p_ci[0] * t_exec * pow_ci[0], p_ci[1] * t_exec * pow_ci[1])


@dataclass(frozen=True)
class BlockEstimate:
    """All point estimates and intervals for one key."""

    key: CombinationKey
    n_k: int
    p_hat: float
    t_hat: float
    pow_hat: float
    pow_s: float | None
    e_hat: float
    p_ci: tuple[float, float]
    t_ci: tuple[float, float]
    pow_ci: tuple[float, float]
    e_ci: tuple[float, float]
    ci_valid: bool
    pow_ci_computable: bool


@dataclass(frozen=True)
class DomainTotal:
    """Whole-run aggregate for one power domain."""

    domain: str
    mean_watts: float
    energy_j: float


@dataclass(frozen=True)
class Profile:
    """Aggregated result of one profiling run.

    `n` counts sample instants; `n_obs` counts attribution observations
    (equal to n in per-combination mode, n * slots in per-block mode, where
    every sample contributes one count per thread slot). Estimate counts sum
    to n_obs; estimated times sum to t_exec.
    """

    t_exec: float
    n: int
    n_obs: int
    slots: int
    granularity: Literal["block", "combination"]
    estimates: dict[CombinationKey, BlockEstimate]
    domain_totals: dict[str, DomainTotal]

    @property
    def e_total_estimated(self) -> float:
        return math.fsum(e.e_hat for e in self.estimates.values())

    @property
    def e_total_measured(self) -> float:
        return math.fsum(d.energy_j for d in self.domain_totals.values())


def build_profile(
    samples: Iterable[SampleRecord],
    t_exec: float,
    spec: ConfidenceSpec,
    granularity: Literal["block", "combination"] = "block",
) -> Profile:
    """Aggregate a sample stream into per-key estimates.

    Per-combination mode keys each sample on the full cross-thread tuple.
    Per-block mode projects each sample onto every thread slot's block: each
    slot contributes one count and receives the full power reading. This is
    shared-resource attribution, not per-thread apportioning; concurrent
    blocks each carry the whole package power.
    """
    if granularity not in ("block", "combination"):
        raise ValueError(f"unknown granularity {granularity!r}")
    counts: dict[CombinationKey, int] = {}
    powers: dict[CombinationKey, list[float]] = {}
    domain_sums: dict[str, float] = {}
    n = 0
    slots: int | None = None
    for rec in samples:
        if slots is None:
            slots = len(rec.key)
            if slots == 0:
                raise MalformedStreamError("zero-length combination key")
        elif len(rec.key) != slots:
            raise MalformedStreamError(
                f"sample {rec.seq}: key length {len(rec.key)} != {slots}"
            )
        n += 1
        watts = rec.power.total_watts
        if granularity == "combination":
            keys = [rec.key]
        else:
            keys = [CombinationKey.single(b) for b in rec.key.blocks]
        for key in keys:
            counts[key] = counts.get(key, 0) + 1
            powers.setdefault(key, []).append(watts)
        for domain, w in rec.power.readings.items():
            domain_sums[domain] = domain_sums.get(domain, 0.0) + w
    if n == 0 or slots is None:
        raise EmptyStreamError("empty sample stream")

    n_obs = n * slots if granularity == "block" else n
    estimates: dict[CombinationKey, BlockEstimate] = {}
    for key, n_k in counts.items():
        p_hat = estimate_proportion(n_k, n_obs)
        t_hat = estimate_time(p_hat, t_exec)
        pow_hat = estimate_mean_power(powers[key])
        p_int = proportion_ci(p_hat, n_obs, spec)
        pow_int = power_ci(powers[key], spec)
        e_hat = estimate_energy(pow_hat, t_hat)
        e_lo, e_up = energy_ci(
            (p_int.lower, p_int.upper), t_exec, (pow_int.lower, pow_int.upper)
        )
        estimates[key] = BlockEstimate(
            key=key,
            n_k=n_k,
            p_hat=p_hat,
            t_hat=t_hat,
            pow_hat=pow_hat,
            pow_s=pow_int.s,
            e_hat=e_hat,
            p_ci=(p_int.lower, p_int.upper),
            t_ci=(p_int.lower * t_exec, p_int.upper * t_exec),
            pow_ci=(pow_int.lower, pow_int.upper),
            e_ci=(e_lo, e_up),
            ci_valid=p_int.valid,
            pow_ci_computable=pow_int.computable,
        )
    domain_totals = {
        d: DomainTotal(d, total / n, (total / n) * t_exec)
        for d, total in domain_sums.items()
    }
    return Profile(
        t_exec=t_exec,
        n=n,
        n_obs=n_obs,
        slots=slots,
        granularity=granularity,
        estimates=estimates,
        domain_totals=domain_totals,
    )
