"""Command-line frontend.

Subcommands:
  profile   spawn or attach to a target, sample it, write trace and report
  replay    rebuild a report offline from a recorded sample trace
  simulate  run synthetic workloads against ground truth and report
            estimator error and CI coverage

Every documented failure mode maps to a distinct exit code. All flags can be
defaulted through BLOCKWATT_* environment variables (e.g. BLOCKWATT_PERIOD_MS).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import statistics as pystats
import subprocess
import sys
from pathlib import Path

from blockwatt import __version__, figures, report as report_mod, sim
from blockwatt.blockmap import BlockMapError, Resolver, load_blockmap
from blockwatt.model import ConfidenceSpec, build_profile
from blockwatt.power import DEFAULT_SUSPECT_CAP_WATTS, PowerSourceError, open_source
from blockwatt.sampler import (
    AttachError,
    PtraceTarget,
    SamplerConfig,
    TraceFormatError,
    format_trace_record,
    replay,
    resolve_trace,
    run_systematic,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MALFORMED_INPUT = 3
EXIT_ATTACH = 4
EXIT_SENSOR = 5
EXIT_BLOCKMAP = 6
EXIT_TARGET_CRASH = 7

ENV_PREFIX = "BLOCKWATT_"


def _env(name: str, cast, fallback):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None:
        return fallback
    if cast is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    return cast(raw)


def _add_common_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--output", type=Path, default=None,
                   help="report file (default: stdout)")
    p.add_argument("--format", choices=("json", "csv", "text"),
                   default=_env("FORMAT", str, "text"))
    p.add_argument("--figures", type=Path, default=None, metavar="DIR",
                   help="also render figures into DIR")
    p.add_argument("--alpha", type=float, default=_env("ALPHA", float, 0.05),
                   help="significance level for all confidence intervals")
    p.add_argument("--min-samples", type=int, default=0,
                   help="hide rows below this count in text output only")


def _add_sampling_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--period-ms", type=float,
                   default=_env("PERIOD_MS", float, 10.0))
    jitter = p.add_mutually_exclusive_group()
    jitter.add_argument("--jitter", dest="jitter", action="store_true",
                        default=_env("JITTER", bool, True))
    jitter.add_argument("--no-jitter", dest="jitter", action="store_false")
    p.add_argument("--jitter-frac", type=float,
                   default=_env("JITTER_FRAC", float, 0.05),
                   help="uniform jitter bound as a fraction of the period")
    p.add_argument("--granularity", choices=("block", "combination"),
                   default=_env("GRANULARITY", str, "block"))
    p.add_argument("--blockmap", type=Path, action="append", default=[],
                   metavar="PATH[@BIAS]",
                   help="block-map file; repeatable, one per module; "
                        "append @0xBIAS for a runtime load bias")
    p.add_argument("--seed", type=int, default=_env("SEED", int, None))
    p.add_argument("--suspect-cap-watts", type=float,
                   default=_env("SUSPECT_CAP_WATTS", float,
                                DEFAULT_SUSPECT_CAP_WATTS))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blockwatt",
        description="Basic-block energy profiler via simultaneous "
                    "instruction-pointer and power sampling.",
    )
    parser.add_argument("--version", action="version",
                        version=f"blockwatt {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("profile", help="profile a live target")
    p.add_argument("--pid", type=int, default=None,
                   help="attach to a running process instead of spawning")
    p.add_argument("argv", nargs=argparse.REMAINDER, metavar="COMMAND",
                   help="command line to spawn (omit when using --pid)")
    p.add_argument("--power-source", required=True, metavar="SPEC",
                   help="e.g. mock:PKG=9.5 | counters:PKG=/sys/...​ | "
                        "replay:trace.csv | meter:BIG_CLUSTER=/dev/...")
    p.add_argument("--record", type=Path, default=None,
                   help="write the raw sample trace here")
    p.add_argument("--pin-core", type=int,
                   default=_env("PIN_CORE", int, None),
                   help="pin the control loop to this core and keep a "
                        "spawned target off it")
    p.add_argument("--max-duration", type=float, default=None, metavar="S")
    p.add_argument("--max-samples", type=int, default=None)
    _add_sampling_flags(p)
    _add_common_output_flags(p)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("replay", help="rebuild a report from a recorded trace")
    p.add_argument("trace", type=Path)
    p.add_argument("--t-exec-s", type=float, default=None,
                   help="total execution time of the recorded run; default "
                        "reconstructs last sample time + median spacing")
    _add_sampling_flags(p)
    _add_common_output_flags(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("simulate",
                       help="validate estimators against synthetic ground truth")
    p.add_argument("scenario", type=Path)
    p.add_argument("--replications", type=int,
                   default=_env("REPLICATIONS", int, 50))
    p.add_argument("--granularity", choices=("block", "combination"),
                   default="combination",
                   help="aggregation for multi-thread scenarios")
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario's base seed")
    _add_common_output_flags(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def _load_resolver(paths: list[Path]) -> Resolver:
    maps = []
    for item in paths:
        text = str(item)
        bias = 0
        if "@" in text:
            text, _, bias_s = text.rpartition("@")
            bias = int(bias_s, 0)
        maps.append(load_blockmap(text, bias))
    return Resolver(maps)


def _emit(args, doc: dict) -> None:
    if args.format == "json":
        payload = report_mod.render_json(doc)
    elif args.format == "csv":
        payload = report_mod.render_csv(doc)
    else:
        payload = report_mod.render_text(doc, args.min_samples).encode()
    if args.output:
        args.output.write_bytes(payload)
    else:
        sys.stdout.buffer.write(payload)
    if args.figures:
        figures.render_profile_figures(doc, args.figures)


def _config_echo(args, keys: list[str]) -> dict:
    echo = {}
    for k in keys:
        v = getattr(args, k, None)
        echo[k] = str(v) if isinstance(v, Path) else v
    return echo


def _report_from_trace(args, records, t_exec: float, sampler_stats=None,
                       target_exit_code=None) -> dict:
    resolver = _load_resolver(args.blockmap)
    samples, _, suspect = resolve_trace(
        records, resolver.resolve, args.suspect_cap_watts
    )
    if not samples:
        raise TraceFormatError("no usable samples (all suspect or empty)")
    profile = build_profile(
        samples, t_exec, ConfidenceSpec.from_alpha(args.alpha), args.granularity
    )
    return report_mod.build_report(
        profile,
        alpha=args.alpha,
        config_echo=_config_echo(
            args, ["period_ms", "jitter", "jitter_frac", "alpha", "granularity",
                   "seed", "suspect_cap_watts"]
        ),
        labels=resolver.labels(),
        all_keys=resolver.all_keys(),
        sampler_stats=sampler_stats,
        suspect_count=suspect,
        target_exit_code=target_exit_code,
    )


def cmd_profile(args) -> int:
    argv = [a for a in args.argv if a != "--"]
    if (args.pid is None) == (not argv):
        print("blockwatt: give exactly one of --pid or a command line",
              file=sys.stderr)
        return EXIT_USAGE
    try:
        source = open_source(args.power_source)
    except PowerSourceError as exc:
        print(f"blockwatt: power source error: {exc}", file=sys.stderr)
        return EXIT_SENSOR
    try:
        _load_resolver(args.blockmap)  # fail fast before touching the target
    except BlockMapError as exc:
        print(f"blockwatt: block map error: {exc}", file=sys.stderr)
        return EXIT_BLOCKMAP

    proc = None
    try:
        if args.pid is not None:
            pid = args.pid
        else:
            if not argv:
                print("blockwatt: no target command given", file=sys.stderr)
                return EXIT_USAGE
            proc = subprocess.Popen(argv)
            pid = proc.pid
            if args.pin_core is not None:
                all_cores = os.sched_getaffinity(pid)
                others = all_cores - {args.pin_core}
                if others:
                    os.sched_setaffinity(pid, others)
        target = PtraceTarget(pid)
    except AttachError as exc:
        if proc:
            proc.kill()
        print(f"blockwatt: attach error: {exc}", file=sys.stderr)
        return EXIT_ATTACH

    config = SamplerConfig(
        period_ms=args.period_ms,
        jitter=args.jitter,
        jitter_frac=args.jitter_frac,
        cpu_affinity=args.pin_core,
        max_samples=args.max_samples,
        max_duration_s=args.max_duration,
        seed=args.seed,
    )
    records = []
    record_file = open(args.record, "w") if args.record else None

    def sink(rec):
        records.append(rec)
        if record_file:
            record_file.write(format_trace_record(rec) + "\n")

    try:
        sampler_report = run_systematic(target, config, source, sink)
    finally:
        if record_file:
            if not records:
                record_file.write("# partial-trace: no samples\n")
            record_file.close()
        source.close()

    exit_code = None
    crashed = False
    if proc is not None:
        if sampler_report.target_exited:
            # the tracer's waitpid may have reaped the child already, making
            # Popen.wait() report 0; prefer the status the tracer captured
            proc.wait()
            exit_code = (
                target.exit_status
                if target.exit_status is not None
                else proc.returncode
            )
            crashed = exit_code != 0
        else:
            proc.terminate()  # we own the spawned target; stop it with us
            exit_code = proc.wait()

    stats = {
        "cumulative_stop_ns": sampler_report.cumulative_stop_ns,
        "overhead_fraction": sampler_report.overhead_fraction,
        "mean_abs_offset_ns": sampler_report.mean_abs_offset_ns,
        "max_abs_offset_ns": sampler_report.max_abs_offset_ns,
        "partial": sampler_report.partial,
    }
    try:
        doc = _report_from_trace(
            args, records, sampler_report.t_exec_s, stats, exit_code
        )
    except (TraceFormatError, BlockMapError) as exc:
        print(f"blockwatt: {exc}", file=sys.stderr)
        return EXIT_MALFORMED_INPUT
    _emit(args, doc)
    if crashed:
        # report written from partial data; flag the crash distinctly
        print(f"blockwatt: target exited with status {exit_code}", file=sys.stderr)
        return EXIT_TARGET_CRASH
    return EXIT_OK


def _reconstruct_t_exec(records) -> float:
    last = records[-1].wall_time_ns
    if len(records) >= 2:
        gaps = [b.wall_time_ns - a.wall_time_ns for a, b in zip(records, records[1:])]
        spacing = pystats.median(gaps)
    else:
        spacing = 0.0
    return (last + spacing) * 1e-9


def cmd_replay(args) -> int:
    try:
        records = replay(args.trace)
        t_exec = args.t_exec_s or _reconstruct_t_exec(records)
        doc = _report_from_trace(args, records, t_exec)
    except TraceFormatError as exc:
        print(f"blockwatt: trace error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED_INPUT
    except BlockMapError as exc:
        print(f"blockwatt: block map error: {exc}", file=sys.stderr)
        return EXIT_BLOCKMAP
    _emit(args, doc)
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        scenario = sim.load_scenario(args.scenario)
    except sim.ScenarioError as exc:
        print(f"blockwatt: scenario error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED_INPUT
    if args.seed is not None:
        scenario = sim.Scenario(
            threads=scenario.threads, schedule=scenario.schedule,
            tick_hz=scenario.tick_hz, period_ticks=scenario.period_ticks,
            jitter_ticks=scenario.jitter_ticks, seed=args.seed,
            alpha=scenario.alpha, power_window_ticks=scenario.power_window_ticks,
        )
    summary = sim.run_replications(scenario, args.replications, args.granularity)
    doc = {
        "scenario": str(args.scenario),
        "replications": summary.replications,
        "n_samples": summary.n_samples,
        "alpha": scenario.alpha,
        "mare_t": summary.mare_t,
        "mare_pow": summary.mare_pow,
        "mare_e": summary.mare_e,
        "coverage": {
            "p": summary.p_coverage,
            "pow": summary.pow_coverage,
            "e": summary.e_coverage,
            "valid_pairs": summary.n_valid_pairs,
        },
        "per_key": [
            {"key": str(k), "mare_e": v}
            for k, v in sorted(summary.per_key_mare_e.items(), key=lambda kv: str(kv[0]))
        ],
    }
    if args.format == "json":
        payload = (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()
    elif args.format == "csv":
        lines = ["key,mare_e"]
        lines += [f"{row['key']},{row['mare_e']!r}" for row in doc["per_key"]]
        payload = ("\n".join(lines) + "\n").encode()
    else:
        lines = [
            f"simulation: {doc['scenario']}  "
            f"({doc['replications']} replications, n={doc['n_samples']})",
            f"mean abs rel error: time {100 * doc['mare_t']:.3f}%  "
            f"power {100 * doc['mare_pow']:.3f}%  energy {100 * doc['mare_e']:.3f}%",
            f"CI coverage (nominal {100 * (1 - doc['alpha']):g}%): "
            f"p {100 * doc['coverage']['p']:.1f}%  "
            f"pow {100 * doc['coverage']['pow']:.1f}%  "
            f"e {100 * doc['coverage']['e']:.1f}%  "
            f"({doc['coverage']['valid_pairs']} valid pairs)",
        ]
        payload = ("\n".join(lines) + "\n").encode()
    if args.output:
        args.output.write_bytes(payload)
    else:
        sys.stdout.buffer.write(payload)
    if args.figures:
        figures.render_simulation_figures(doc, args.figures)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
