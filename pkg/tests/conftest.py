import pytest

from blockwatt.model import BlockKey
from blockwatt.sim import LatencyDist, PowerDist, SyntheticBlockSpec

# Desk-scale benchmark: 10 blocks with per-iteration latencies spanning
# 100..50000 ticks and constant powers 5..15 W, ~1e7 ticks of total time
# each (about 100 simulated seconds at the default 1 MHz tick rate).
BENCH_DEFS = [
    ("b0", LatencyDist("constant", 100), 5.0),
    ("b1", LatencyDist("constant", 250), 6.0),
    ("b2", LatencyDist("uniform", 200, 800), 7.0),
    ("b3", LatencyDist("constant", 1000), 8.0),
    ("b4", LatencyDist("uniform", 2000, 3000), 9.0),
    ("b5", LatencyDist("constant", 5100), 10.5),
    ("b6", LatencyDist("constant", 9900), 11.5),
    ("b7", LatencyDist("constant", 21000), 12.5),
    ("b8", LatencyDist("uniform", 25000, 35000), 14.0),
    ("b9", LatencyDist("constant", 50000), 15.0),
]

# Blocks whose per-iteration duration exceeds the 10 ms sampling period
# (10000 ticks).
COARSE_BLOCKS = ("b7", "b8", "b9")

SAMPLING_PERIOD_TICKS = 10_000


def benchmark_program() -> list[SyntheticBlockSpec]:
    return [
        SyntheticBlockSpec(
            BlockKey("sim", name), lat, PowerDist("constant", watts),
            round(1e7 / lat.mean),
        )
        for name, lat, watts in BENCH_DEFS
    ]


@pytest.fixture(scope="session")
def bench_program():
    return benchmark_program()
