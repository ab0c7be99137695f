"""Address-to-block resolution.

Block maps are produced offline (by a disassembler or a compiler pass) and
consumed here as data: sorted, overlap-free address ranges with
source-anchored labels. A symbol table can stand in at function granularity
when no block map exists. Resolution is a binary search over bias-corrected
addresses; misses resolve to a per-module unknown pseudo-key so unmapped time
stays visible in reports.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from blockwatt.model import BlockKey


class BlockMapError(ValueError):
    """Parse failure, overlapping ranges, or an empty map."""


@dataclass(frozen=True)
class AddressRange:
    """[start, end) in link-time virtual addresses."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start >= self.end:
            raise BlockMapError(f"empty range [{self.start:#x}, {self.end:#x})")


@dataclass(frozen=True)
class BlockDescriptor:
    key: BlockKey
    ranges: tuple[AddressRange, ...]
    label: str
    granularity: str = "block"  # "block" | "function"

    def __post_init__(self) -> None:
        if not self.ranges:
            raise BlockMapError(f"descriptor {self.key} has no ranges")
        if not self.label:
            raise BlockMapError(f"descriptor {self.key} has empty label")


class BlockMap:
    """Binary-searchable map from addresses to blocks for one module."""

    def __init__(
        self,
        module_id: str,
        descriptors: Sequence[BlockDescriptor],
        load_bias: int = 0,
    ):
        if not descriptors:
            raise BlockMapError(f"empty block map for module {module_id!r}")
        self.module_id = module_id
        self.load_bias = load_bias
        self.descriptors = tuple(descriptors)
        flat = []
        for desc in self.descriptors:
            for r in desc.ranges:
                flat.append((r.start, r.end, desc))
        flat.sort(key=lambda t: t[0])
        for (s0, e0, d0), (s1, e1, d1) in zip(flat, flat[1:]):
            if s1 < e0:
                raise BlockMapError(
                    f"module {module_id!r}: overlapping ranges "
                    f"[{s0:#x},{e0:#x}) ({d0.label!r}) and "
                    f"[{s1:#x},{e1:#x}) ({d1.label!r})"
                )
        self._starts = [s for s, _, _ in flat]
        self._ends = [e for _, e, _ in flat]
        self._descs = [d for _, _, d in flat]
        self._unknown = BlockKey.unknown(module_id)

    def with_load_bias(self, load_bias: int) -> "BlockMap":
        return BlockMap(self.module_id, self.descriptors, load_bias)

    def resolve(self, address: int) -> BlockKey:
        """Map a runtime address to its block key, or the module's unknown key."""
        a = address - self.load_bias
        i = bisect_right(self._starts, a) - 1
        if i >= 0 and a < self._ends[i]:
            return self._descs[i].key
        return self._unknown

    def labels(self) -> dict[BlockKey, str]:
        return {d.key: d.label for d in self.descriptors}


class Resolver:
    """Resolves against multiple module maps; first hit wins."""

    def __init__(self, maps: Sequence[BlockMap] = ()):
        self.maps = list(maps)
        self._unknown = BlockKey.unknown()

    def resolve(self, address: int) -> BlockKey:
        for m in self.maps:
            key = m.resolve(address)
            if not key.is_unknown:
                return key
        return self._unknown

    def labels(self) -> dict[BlockKey, str]:
        out: dict[BlockKey, str] = {}
        for m in self.maps:
            out.update(m.labels())
        return out

    def all_keys(self) -> list[BlockKey]:
        return [d.key for m in self.maps for d in m.descriptors]


def load_blockmap(path: str | Path, load_bias: int = 0) -> BlockMap:
    """Load a block map from the tab-separated text format or its JSON
    equivalent (chosen by a .json suffix or a leading '{')."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise BlockMapError(f"cannot read block map {path}: {exc}") from exc
    if path.suffix == ".json" or text.lstrip()[:1] == "{":
        return _parse_json(text, path, load_bias)
    return _parse_text(text, path, load_bias)


def _parse_text(text: str, path: Path, load_bias: int) -> BlockMap:
    # One record per line: module<TAB>start_hex<TAB>end_hex<TAB>label.
    # Lines sharing (module, label) merge into one multi-range block.
    module_id: str | None = None
    blocks: dict[str, list[AddressRange]] = {}
    grans: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise BlockMapError(
                f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}"
            )
        mod, start_s, end_s, label = (p.strip() for p in parts)
        try:
            start, end = int(start_s, 16), int(end_s, 16)
        except ValueError as exc:
            raise BlockMapError(f"{path}:{lineno}: bad address: {exc}") from exc
        if module_id is None:
            module_id = mod
        elif mod != module_id:
            raise BlockMapError(
                f"{path}:{lineno}: mixed modules {module_id!r} and {mod!r} in one map"
            )
        try:
            blocks.setdefault(label, []).append(AddressRange(start, end))
        except BlockMapError as exc:
            raise BlockMapError(f"{path}:{lineno}: {exc}") from exc
        grans[label] = "block"
    if module_id is None:
        raise BlockMapError(f"{path}: empty block map")
    descriptors = [
        BlockDescriptor(BlockKey(module_id, label), tuple(ranges), label, grans[label])
        for label, ranges in blocks.items()
    ]
    return BlockMap(module_id, descriptors, load_bias)


def _parse_json(text: str, path: Path, load_bias: int) -> BlockMap:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BlockMapError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    try:
        module_id = doc["module"]
        blocks = doc["blocks"]
    except (KeyError, TypeError) as exc:
        raise BlockMapError(f"{path}: missing field {exc}") from exc
    if not isinstance(blocks, list) or not blocks:
        raise BlockMapError(f"{path}: empty block map")
    descriptors = []
    for i, b in enumerate(blocks):
        try:
            label = b["label"]
            ranges = tuple(
                AddressRange(int(r["start"], 16), int(r["end"], 16))
                for r in b["ranges"]
            )
            gran = b.get("granularity", "block")
        except (KeyError, TypeError, ValueError) as exc:
            raise BlockMapError(f"{path}: blocks[{i}]: {exc}") from exc
        descriptors.append(
            BlockDescriptor(BlockKey(module_id, label), ranges, label, gran)
        )
    bias = doc.get("load_bias", load_bias)
    if isinstance(bias, str):
        bias = int(bias, 16)
    return BlockMap(module_id, descriptors, bias)


def serialize_blockmap(bmap: BlockMap, fmt: str = "text") -> str:
    """Canonical serialization; parsing it back yields an equivalent map."""
    if fmt == "text":
        lines = ["# module\tstart\tend\tlabel"]
        for desc in sorted(bmap.descriptors, key=lambda d: d.ranges[0].start):
            for r in sorted(desc.ranges, key=lambda r: r.start):
                lines.append(f"{bmap.module_id}\t{r.start:#x}\t{r.end:#x}\t{desc.label}")
        return "\n".join(lines) + "\n"
    if fmt == "json":
        doc = {
            "module": bmap.module_id,
            "load_bias": bmap.load_bias,
            "blocks": [
                {
                    "label": desc.label,
                    "granularity": desc.granularity,
                    "ranges": [
                        {"start": f"{r.start:#x}", "end": f"{r.end:#x}"}
                        for r in desc.ranges
                    ],
                }
                for desc in sorted(bmap.descriptors, key=lambda d: d.ranges[0].start)
            ],
        }
        return json.dumps(doc, indent=2) + "\n"
    raise ValueError(f"unknown block-map format {fmt!r}")


def symbol_fallback(
    module_id: str,
    symbol_table: Iterable[tuple[str, int, int]],
    load_bias: int = 0,
) -> BlockMap:
    """Function-granularity map from a plain symbol table of
    (name, start, end) entries, for targets without a block map."""
    descriptors = [
        BlockDescriptor(
            BlockKey(module_id, name), (AddressRange(start, end),), name, "function"
        )
        for name, start, end in symbol_table
    ]
    if not descriptors:
        raise BlockMapError(f"empty symbol table for module {module_id!r}")
    return BlockMap(module_id, descriptors, load_bias)
