"""Linux x86-64 debugging-interface layer: seize, interrupt, read the
instruction pointer, resume. This is the only module that touches ptrace;
ports to other platforms replace it behind the same four operations."""

from __future__ import annotations

import ctypes
import errno
import os
import platform
import signal

PTRACE_CONT = 7
PTRACE_GETREGS = 12
PTRACE_DETACH = 17
PTRACE_SEIZE = 0x4206
PTRACE_INTERRUPT = 0x4207

PTRACE_EVENT_STOP = 128
WALL = 0x40000000

# x86_64 user_regs_struct: 27 unsigned longs, rip at index 16.
_NREGS = 27
_RIP_INDEX = 16


class PtraceError(OSError):
    pass


class TargetExited(Exception):
    """The traced process is gone; profiling ends normally."""


_libc = ctypes.CDLL(None, use_errno=True)
_libc.ptrace.restype = ctypes.c_long
_libc.ptrace.argtypes = [ctypes.c_long, ctypes.c_long, ctypes.c_void_p, ctypes.c_void_p]


def is_supported() -> bool:
    return platform.system() == "Linux" and platform.machine() == "x86_64"


def _ptrace(request: int, pid: int, addr=None, data=None) -> int:
    ctypes.set_errno(0)
    ret = _libc.ptrace(request, pid, addr, data)
    if ret == -1:
        err = ctypes.get_errno()
        if err:
            raise PtraceError(err, f"ptrace({request:#x}, {pid}): {os.strerror(err)}")
    return ret


def list_tids(pid: int) -> list[int]:
    try:
        return sorted(int(t) for t in os.listdir(f"/proc/{pid}/task"))
    except (FileNotFoundError, ProcessLookupError):
        raise TargetExited(pid) from None


def seize(tid: int) -> None:
    _ptrace(PTRACE_SEIZE, tid)


def interrupt_and_wait(tid: int, on_exit=None) -> int | None:
    """Stop one task; returns the signal to re-deliver on resume (0 for a
    plain interrupt stop), or None if the task exited instead.

    The tracer's waitpid reaps the task on exit, hiding its status from any
    ordinary parent; `on_exit(raw_status)` hands that status back."""
    try:
        _ptrace(PTRACE_INTERRUPT, tid)
    except PtraceError as exc:
        if exc.errno == errno.ESRCH:
            return None
        raise
    while True:
        try:
            _, status = os.waitpid(tid, WALL)
        except ChildProcessError:
            return None
        if os.WIFEXITED(status) or os.WIFSIGNALED(status):
            if on_exit is not None:
                on_exit(status)
            return None
        if os.WIFSTOPPED(status):
            sig = os.WSTOPSIG(status)
            event = status >> 16
            if sig == signal.SIGTRAP and event == PTRACE_EVENT_STOP:
                return 0
            if event != 0:
                return 0  # other ptrace event stop; nothing to deliver
            return sig  # signal-delivery stop: re-inject on resume


def read_ip(tid: int) -> int:
    regs = (ctypes.c_ulonglong * _NREGS)()
    _ptrace(PTRACE_GETREGS, tid, None, ctypes.byref(regs))
    return int(regs[_RIP_INDEX])


def resume(tid: int, deliver_signal: int = 0) -> None:
    try:
        _ptrace(PTRACE_CONT, tid, None, deliver_signal or None)
    except PtraceError as exc:
        if exc.errno != errno.ESRCH:
            raise


def detach_stopped(tid: int) -> None:
    """Detach a task currently in a ptrace stop."""
    try:
        _ptrace(PTRACE_DETACH, tid)
    except PtraceError as exc:
        if exc.errno != errno.ESRCH:
            raise


def detach_running(tid: int) -> None:
    # DETACH needs a stopped tracee; interrupt first, ignore races with exit.
    try:
        if interrupt_and_wait(tid) is None:
            return
        _ptrace(PTRACE_DETACH, tid)
    except PtraceError as exc:
        if exc.errno != errno.ESRCH:
            raise
