"""Self-tests against a real traced child process.

These compile a small C busy-loop, attach to it via the OS debugging
interface, and check that sampled instruction pointers land inside the
loop function. Skipped when no compiler is available or attach is not
supported on this platform.
"""

import shutil
import signal
import subprocess
import time

import pytest

from blockwatt import _ptrace
from blockwatt.blockmap import symbol_fallback
from blockwatt.model import BlockKey
from blockwatt.power import PKG, MockSource
from blockwatt.sampler import (
    AttachError,
    SamplerConfig,
    attach,
    run_systematic,
    sample_once,
)

pytestmark = pytest.mark.skipif(
    not _ptrace.is_supported() or shutil.which("gcc") is None,
    reason="needs Linux x86-64 and gcc",
)

SPIN_C = r"""
#include <pthread.h>
#include <stdlib.h>

volatile unsigned long sink;

void *spin(void *arg) {
    for (;;) sink++;
    return 0;
}

int main(int argc, char **argv) {
    int extra = argc > 1 ? atoi(argv[1]) : 0;
    for (int i = 0; i < extra; i++) {
        pthread_t t;
        pthread_create(&t, 0, spin, 0);
    }
    spin(0);
    return 0;
}
"""


@pytest.fixture(scope="module")
def spin_bin(tmp_path_factory):
    d = tmp_path_factory.mktemp("live")
    src = d / "spin.c"
    src.write_text(SPIN_C)
    binpath = d / "spin"
    subprocess.run(
        ["gcc", "-O1", "-no-pie", "-pthread", "-o", str(binpath), str(src)],
        check=True,
    )
    return binpath


def symbol_range(binpath, name):
    out = subprocess.run(
        ["nm", "-S", "--defined-only", str(binpath)],
        check=True, capture_output=True, text=True,
    ).stdout
    for line in out.splitlines():
        parts = line.split()
        if len(parts) == 4 and parts[3] == name:
            start, size = int(parts[0], 16), int(parts[1], 16)
            return start, start + size
    raise AssertionError(f"symbol {name} not found")


@pytest.fixture
def spin_proc(spin_bin, request):
    args = getattr(request, "param", [])
    proc = subprocess.Popen([str(spin_bin), *args])
    time.sleep(0.05)  # let threads start
    yield proc
    proc.send_signal(signal.SIGKILL)
    proc.wait()


def test_sampled_ips_resolve_into_spin_loop(spin_bin, spin_proc):
    start, end = symbol_range(spin_bin, "spin")
    bmap = symbol_fallback("spin", [("spin", start, end)])
    target = attach(spin_proc.pid)
    try:
        hits = 0
        for _ in range(20):
            rec = sample_once(target, MockSource({PKG: 1.0}))
            assert len(rec.pairs) == 1
            if bmap.resolve(rec.pairs[0][1]) == BlockKey("spin", "spin"):
                hits += 1
            time.sleep(0.002)
    finally:
        target.detach()
    # -O1 keeps the loop tight inside spin(); nearly every sample lands there
    assert hits >= 18


@pytest.mark.parametrize("spin_proc", [["3"]], indirect=True)
def test_multithread_target_yields_one_pair_per_thread(spin_proc):
    target = attach(spin_proc.pid)
    try:
        rec = sample_once(target, MockSource({PKG: 1.0}))
    finally:
        target.detach()
    assert len(rec.pairs) == 4
    assert len({tid for tid, _ in rec.pairs}) == 4


def test_run_systematic_live_short(spin_bin, spin_proc):
    start, end = symbol_range(spin_bin, "spin")
    bmap = symbol_fallback("spin", [("spin", start, end)])
    out = []
    cfg = SamplerConfig(period_ms=5, jitter=False, first_offset_ns=0,
                        max_samples=20)
    report = run_systematic(attach(spin_proc.pid), cfg,
                            MockSource({PKG: 1.0}), out.append)
    assert report.n == 20
    assert not report.target_exited
    in_loop = sum(
        bmap.resolve(r.pairs[0][1]) == BlockKey("spin", "spin") for r in out
    )
    assert in_loop >= 18
    # target keeps running after detach
    assert spin_proc.poll() is None


def test_target_exit_detected(spin_bin):
    proc = subprocess.Popen([str(spin_bin)])
    time.sleep(0.05)
    target = attach(proc.pid)
    cfg = SamplerConfig(period_ms=5, jitter=False, first_offset_ns=0)
    proc.send_signal(signal.SIGKILL)
    report = run_systematic(target, cfg, MockSource({PKG: 1.0}), lambda r: None)
    proc.wait()
    assert report.target_exited


def test_attach_to_missing_pid_fails():
    with pytest.raises(AttachError):
        attach(2**22 - 3)
