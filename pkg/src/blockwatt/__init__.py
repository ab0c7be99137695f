"""Fine-grain energy profiler: attributes execution time, mean power and energy
to basic blocks (and cross-thread block combinations) by simultaneously sampling
instruction pointers and power sensors, with confidence intervals on every
estimate."""

from blockwatt.model import (
    ABSENT,
    BlockEstimate,
    BlockKey,
    CombinationKey,
    ConfidenceSpec,
    Profile,
    SampleRecord,
    build_profile,
)

__all__ = [
    "ABSENT",
    "BlockEstimate",
    "BlockKey",
    "CombinationKey",
    "ConfidenceSpec",
    "Profile",
    "SampleRecord",
    "build_profile",
]

__version__ = "0.1.0"
