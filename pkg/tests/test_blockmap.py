import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockwatt.blockmap import (
    AddressRange,
    BlockDescriptor,
    BlockMap,
    BlockMapError,
    Resolver,
    load_blockmap,
    serialize_blockmap,
    symbol_fallback,
)
from blockwatt.model import BlockKey


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadText:
    def test_single_range(self, tmp_path):
        p = write(tmp_path, "m.map", "mod\t0x1000\t0x1040\tmain.c:10\n")
        bmap = load_blockmap(p)
        assert len(bmap.descriptors) == 1
        assert bmap.descriptors[0].label == "main.c:10"

    def test_two_disjoint_sorted(self, tmp_path):
        p = write(
            tmp_path, "m.map",
            "mod\t0x2000\t0x2040\tb\nmod\t0x1000\t0x1040\ta\n",
        )
        bmap = load_blockmap(p)
        assert len(bmap.descriptors) == 2
        assert bmap.resolve(0x1000) == BlockKey("mod", "a")

    def test_overlap_rejected_with_offenders(self, tmp_path):
        p = write(tmp_path, "m.map", "mod\t0x10\t0x30\ta\nmod\t0x20\t0x40\tb\n")
        with pytest.raises(BlockMapError, match="overlap"):
            load_blockmap(p)

    def test_comments_and_blank_lines(self, tmp_path):
        p = write(tmp_path, "m.map", "# header\n\nmod\t0x0\t0x10\ta\n")
        assert len(load_blockmap(p).descriptors) == 1

    def test_parse_error_carries_line_number(self, tmp_path):
        p = write(tmp_path, "m.map", "mod\t0x0\t0x10\ta\nmod\tnothex\t0x20\tb\n")
        with pytest.raises(BlockMapError, match=":2"):
            load_blockmap(p)

    def test_empty_map_rejected(self, tmp_path):
        p = write(tmp_path, "m.map", "# nothing\n")
        with pytest.raises(BlockMapError, match="empty"):
            load_blockmap(p)

    def test_split_block_merges_ranges(self, tmp_path):
        p = write(
            tmp_path, "m.map",
            "mod\t0x0\t0x10\tloop\nmod\t0x40\t0x50\tloop\n",
        )
        bmap = load_blockmap(p)
        assert len(bmap.descriptors) == 1
        assert bmap.resolve(0x5) == bmap.resolve(0x45)


class TestLoadJson:
    def test_json_equivalent(self, tmp_path):
        p = write(tmp_path, "m.json", """{
          "module": "mod",
          "blocks": [
            {"label": "a", "ranges": [{"start": "0x1000", "end": "0x1040"}]}
          ]
        }""")
        bmap = load_blockmap(p)
        assert bmap.resolve(0x1008) == BlockKey("mod", "a")

    def test_load_bias_from_file(self, tmp_path):
        p = write(tmp_path, "m.json", """{
          "module": "mod", "load_bias": "0x100",
          "blocks": [{"label": "a", "ranges": [{"start": "0x0", "end": "0x10"}]}]
        }""")
        bmap = load_blockmap(p)
        assert bmap.resolve(0x105) == BlockKey("mod", "a")
        assert bmap.resolve(0x5).is_unknown


class TestResolve:
    def make(self):
        return BlockMap("mod", [
            BlockDescriptor(BlockKey("mod", "a"), (AddressRange(0x1000, 0x1040),), "a"),
            BlockDescriptor(BlockKey("mod", "b"), (AddressRange(0x2000, 0x2100),), "b"),
        ])

    def test_hit(self):
        assert self.make().resolve(0x1008) == BlockKey("mod", "a")

    def test_zero_misses(self):
        assert self.make().resolve(0x0).is_unknown

    def test_gap_misses(self):
        assert self.make().resolve(0x1800).is_unknown

    def test_end_exclusive(self):
        bmap = self.make()
        assert bmap.resolve(0x103F) == BlockKey("mod", "a")
        assert bmap.resolve(0x1040).is_unknown

    def test_load_bias_applied(self):
        bmap = self.make().with_load_bias(0x10000)
        assert bmap.resolve(0x11008) == BlockKey("mod", "a")

    def test_unknown_key_carries_module(self):
        assert self.make().resolve(0x0) == BlockKey.unknown("mod")

    def test_resolver_multi_module(self):
        r = Resolver([
            self.make(),
            BlockMap("lib", [BlockDescriptor(
                BlockKey("lib", "f"), (AddressRange(0x9000, 0x9100),), "f")]),
        ])
        assert r.resolve(0x9050) == BlockKey("lib", "f")
        assert r.resolve(0x1008) == BlockKey("mod", "a")
        assert r.resolve(0x0).is_unknown


class TestSymbolFallback:
    TABLE = [("f", 0x0, 0x100), ("g", 0x100, 0x200)]

    def test_two_function_descriptors(self):
        bmap = symbol_fallback("mod", self.TABLE)
        assert len(bmap.descriptors) == 2
        assert all(d.granularity == "function" for d in bmap.descriptors)

    def test_resolves_inside_function(self):
        assert symbol_fallback("mod", self.TABLE).resolve(0x180) == BlockKey("mod", "g")

    def test_miss_past_end(self):
        assert symbol_fallback("mod", self.TABLE).resolve(0x250).is_unknown

    def test_empty_table_rejected(self):
        with pytest.raises(BlockMapError):
            symbol_fallback("mod", [])


class TestRoundTrip:
    @pytest.mark.parametrize("fmt", ["text", "json"])
    def test_serialize_load_equivalent(self, tmp_path, fmt):
        bmap = BlockMap("mod", [
            BlockDescriptor(BlockKey("mod", "a"),
                            (AddressRange(0x0, 0x10), AddressRange(0x40, 0x50)), "a"),
            BlockDescriptor(BlockKey("mod", "b"), (AddressRange(0x10, 0x40),), "b"),
        ])
        suffix = "map" if fmt == "text" else "json"
        p = tmp_path / f"rt.{suffix}"
        p.write_text(serialize_blockmap(bmap, fmt))
        reloaded = load_blockmap(p)
        for addr in range(0x0, 0x60, 4):
            assert reloaded.resolve(addr) == bmap.resolve(addr)

    @given(st.lists(st.integers(min_value=0, max_value=500), min_size=2,
                    max_size=20, unique=True))
    @settings(max_examples=50, deadline=None)
    def test_resolution_stable_under_reserialization(self, tmp_path_factory, cuts):
        # adjacent [c_i, c_i+1) ranges from sorted cut points never overlap
        cuts = sorted(cuts)
        descriptors = [
            BlockDescriptor(BlockKey("m", f"blk{i}"), (AddressRange(a, b),), f"blk{i}")
            for i, (a, b) in enumerate(zip(cuts, cuts[1:]))
        ]
        bmap = BlockMap("m", descriptors)
        tmp = tmp_path_factory.mktemp("rt") / "m.map"
        tmp.write_text(serialize_blockmap(bmap, "text"))
        reloaded = load_blockmap(tmp)
        for addr in range(0, 510, 7):
            assert reloaded.resolve(addr) == bmap.resolve(addr)
