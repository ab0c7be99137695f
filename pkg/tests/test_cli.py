import json
import shutil
import sys
from pathlib import Path

import pytest

from blockwatt import _ptrace
from blockwatt.cli import (
    EXIT_ATTACH,
    EXIT_BLOCKMAP,
    EXIT_MALFORMED_INPUT,
    EXIT_OK,
    EXIT_SENSOR,
    EXIT_TARGET_CRASH,
    EXIT_USAGE,
    main,
)
from blockwatt.report import validate_report

DATA = Path(__file__).parent / "data"

GOLDEN_ARGS = [
    "replay", str(DATA / "golden.trace"),
    "--blockmap", str(DATA / "golden.map"),
    "--t-exec-s", "0.589465", "--no-jitter",
]

SCENARIO = {
    "tick_hz": 1000, "period_ticks": 10, "jitter_ticks": 3, "seed": 5,
    "blocks": [
        {"block": "a", "iterations": 200,
         "latency": {"kind": "constant", "ticks": 10},
         "power": {"kind": "constant", "watts": 9.0}},
        {"block": "b", "iterations": 200,
         "latency": {"kind": "uniform", "a": 5, "b": 15},
         "power": {"kind": "constant", "watts": 12.0}},
    ],
}


def run_replay(tmp_path, *extra):
    out = tmp_path / "out"
    rc = main(GOLDEN_ARGS + ["--output", str(out), *extra])
    return rc, out


class TestReplay:
    def test_golden_json_byte_identical(self, tmp_path):
        rc, out = run_replay(tmp_path, "--format", "json")
        assert rc == EXIT_OK
        assert out.read_bytes() == (DATA / "golden_report.json").read_bytes()

    def test_json_is_schema_valid(self, tmp_path):
        rc, out = run_replay(tmp_path, "--format", "json")
        assert rc == EXIT_OK
        validate_report(json.loads(out.read_text()))

    def test_csv_has_header_and_rows(self, tmp_path):
        rc, out = run_replay(tmp_path, "--format", "csv")
        lines = out.read_text().splitlines()
        assert lines[0].startswith("key,label,n_k,p_hat")
        assert len(lines) == 4  # header + three blocks

    def test_text_mentions_blocks(self, tmp_path):
        rc, out = run_replay(tmp_path, "--format", "text")
        text = out.read_text()
        assert "gamma" in text and "alpha" in text

    def test_min_samples_hides_rows_in_text_only(self, tmp_path):
        rc, out = run_replay(tmp_path, "--format", "text",
                             "--min-samples", "1000")
        assert "gamma" not in out.read_text()
        rc, out = run_replay(tmp_path, "--format", "json",
                             "--min-samples", "1000")
        doc = json.loads(out.read_text())
        assert any(r["key"] == "sim:gamma" for r in doc["blocks"])

    def test_missing_trace_is_malformed_input(self, tmp_path, capsys):
        rc = main(["replay", str(tmp_path / "nope.trace")])
        assert rc == EXIT_MALFORMED_INPUT

    def test_bad_blockmap_exit_code(self, tmp_path):
        bad = tmp_path / "bad.map"
        bad.write_text("mod\tnothex\t0x10\tx\n")
        rc = main(["replay", str(DATA / "golden.trace"),
                   "--blockmap", str(bad)])
        assert rc == EXIT_BLOCKMAP

    def test_reconstructed_t_exec_close_to_true(self, tmp_path):
        out = tmp_path / "out"
        rc = main(["replay", str(DATA / "golden.trace"),
                   "--blockmap", str(DATA / "golden.map"),
                   "--format", "json", "--output", str(out)])
        assert rc == EXIT_OK
        t = json.loads(out.read_text())["meta"]["t_exec_s"]
        assert t == pytest.approx(0.589465, rel=0.01)

    def test_figures_rendered(self, tmp_path):
        figdir = tmp_path / "figs"
        rc, _ = run_replay(tmp_path, "--format", "json",
                           "--figures", str(figdir))
        assert rc == EXIT_OK
        names = {p.name for p in figdir.iterdir()}
        assert "energy_by_block.png" in names
        assert "time_share.png" in names

    def test_env_alpha_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("BLOCKWATT_ALPHA", "0.2")
        rc, out = run_replay(tmp_path, "--format", "json")
        assert json.loads(out.read_text())["meta"]["alpha"] == 0.2

    def test_env_format_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("BLOCKWATT_FORMAT", "csv")
        out = tmp_path / "out"
        rc = main(GOLDEN_ARGS + ["--output", str(out)])
        assert out.read_text().startswith("key,label")


class TestSimulate:
    def write_scenario(self, tmp_path, doc=None):
        p = tmp_path / "s.json"
        p.write_text(json.dumps(doc or SCENARIO))
        return p

    def test_json_summary(self, tmp_path):
        p = self.write_scenario(tmp_path)
        out = tmp_path / "out"
        rc = main(["simulate", str(p), "--replications", "5",
                   "--format", "json", "--output", str(out)])
        assert rc == EXIT_OK
        doc = json.loads(out.read_text())
        assert doc["replications"] == 5
        assert 0 <= doc["mare_e"] < 1
        assert doc["coverage"]["valid_pairs"] > 0

    def test_text_summary(self, tmp_path, capsys):
        p = self.write_scenario(tmp_path)
        rc = main(["simulate", str(p), "--replications", "3",
                   "--format", "text"])
        assert rc == EXIT_OK
        assert "CI coverage" in capsys.readouterr().out

    def test_malformed_scenario(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text("{not json")
        assert main(["simulate", str(p)]) == EXIT_MALFORMED_INPUT

    def test_figures_rendered(self, tmp_path):
        p = self.write_scenario(tmp_path)
        figdir = tmp_path / "figs"
        rc = main(["simulate", str(p), "--replications", "3",
                   "--format", "json", "--output", str(tmp_path / "o"),
                   "--figures", str(figdir)])
        assert rc == EXIT_OK
        names = {f.name for f in figdir.iterdir()}
        assert "energy_error_by_block.png" in names
        assert "ci_coverage.png" in names


needs_live = pytest.mark.skipif(
    not _ptrace.is_supported(), reason="needs Linux x86-64")


class TestProfile:
    def test_usage_without_target(self, capsys):
        rc = main(["profile", "--power-source", "mock:PKG=1.0"])
        assert rc == EXIT_USAGE

    def test_usage_with_both_targets(self):
        rc = main(["profile", "--pid", "1", "--power-source", "mock:PKG=1.0",
                   "--", "true"])
        assert rc == EXIT_USAGE

    def test_bad_power_source(self):
        rc = main(["profile", "--power-source", "bogus:x", "--", "true"])
        assert rc == EXIT_SENSOR

    @needs_live
    def test_attach_to_missing_pid(self):
        rc = main(["profile", "--pid", str(2**22 - 3),
                   "--power-source", "mock:PKG=1.0"])
        assert rc == EXIT_ATTACH

    @needs_live
    def test_profile_spawned_sleep(self, tmp_path):
        out = tmp_path / "out.json"
        trace = tmp_path / "run.trace"
        rc = main(["profile", "--power-source", "mock:PKG=3.5",
                   "--period-ms", "5", "--no-jitter", "--max-samples", "20",
                   "--record", str(trace), "--format", "json",
                   "--output", str(out), "--", "sleep", "2"])
        assert rc == EXIT_OK
        doc = json.loads(out.read_text())
        validate_report(doc)
        assert doc["meta"]["n_samples"] == 20
        assert trace.exists() and len(trace.read_text().splitlines()) == 20
        # no block map given: everything lands on the unknown key
        assert "[unknown]" in doc["blocks"][0]["key"]

    @needs_live
    def test_target_crash_exit_code(self, tmp_path):
        sh = shutil.which("sh")
        rc = main(["profile", "--power-source", "mock:PKG=1.0",
                   "--period-ms", "5", "--no-jitter",
                   "--format", "json", "--output", str(tmp_path / "o"),
                   "--", sh, "-c", "sleep 0.3; exit 9"])
        assert rc == EXIT_TARGET_CRASH
        # the report is still written from the partial run
        doc = json.loads((tmp_path / "o").read_text())
        assert doc["meta"]["target_exit_code"] == 9


class TestMisc:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "blockwatt" in capsys.readouterr().out
