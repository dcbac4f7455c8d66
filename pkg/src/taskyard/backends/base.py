"""Common backend machinery: job descriptions, status reports, the uniform
submit/kill/poll/fetch interface and process helpers."""

from __future__ import annotations

import logging
import os
import shlex
import signal
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..core import BackendHandle, TransitionEvent
from ..errors import SubmitFailed

logger = logging.getLogger(__name__)

# the trio every run produces and fetch always tries to retrieve
ALWAYS_FETCHED = ("stdout", "stderr", "__exitcode__")

# every externally executed command is logged here; verbose mode raises the level
command_log = logging.getLogger("taskyard.backends.commands")


@dataclass
class BackendJobDescription:
    """Everything a backend needs to run one job."""

    job_fqid: str
    wrapper_path: Path
    run_dir: Path
    input_files: list[str] = field(default_factory=list)
    output_patterns: list[str] = field(default_factory=list)
    resource_hints: dict[str, str] = field(default_factory=dict)

    def validate(self):
        wrapper = Path(self.wrapper_path)
        if not wrapper.is_file():
            raise SubmitFailed(f"wrapper missing: {wrapper}")
        if not os.access(wrapper, os.X_OK):
            raise SubmitFailed(f"wrapper not executable: {wrapper}")


@dataclass
class StatusReport:
    """One backend's answer about one handle during a poll."""

    backend_id: str
    raw_status: str
    mapped_event: Optional[TransitionEvent] = None
    exit_code: Optional[int] = None


@dataclass
class PollItem:
    """A handle to poll plus the local-visible run directory, when there is one."""

    handle: BackendHandle
    run_dir: Optional[Path] = None


@dataclass
class FetchResult:
    retrieved: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)


def spawn_wrapper(wrapper_path, cwd) -> subprocess.Popen:
    """Run a wrapper script detached in its own session (so kill gets the
    whole process group, heartbeat children included)."""
    argv = ["/bin/sh", str(wrapper_path)]
    command_log.info("exec: %s (cwd=%s)", shlex.join(argv), cwd)
    return subprocess.Popen(
        argv,
        cwd=str(cwd),
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
        start_new_session=True,
    )


def terminate_group(pid: int) -> bool:
    """SIGTERM a wrapper's process group; False when already gone."""
    try:
        os.killpg(pid, signal.SIGTERM)
        return True
    except ProcessLookupError:
        return False
    except PermissionError:
        return False


def pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def read_exit_code(run_dir: Path) -> Optional[int]:
    path = Path(run_dir) / "__exitcode__"
    if not path.exists():
        return None
    try:
        return int(path.read_text().strip())
    except ValueError:
        return None


def collect_run_outputs(run_dir: Path, destination: Path, output_patterns) -> FetchResult:
    """Copy the stdout/stderr/exit-code trio plus pattern matches into
    ``destination``; absences are reported, not raised."""
    import shutil

    run_dir = Path(run_dir)
    destination = Path(destination)
    destination.mkdir(parents=True, exist_ok=True)
    result = FetchResult()
    wanted: list[tuple[str, bool]] = [(name, False) for name in ALWAYS_FETCHED]
    seen = set()
    for name, is_pattern in wanted:
        src = run_dir / name
        if src.exists():
            shutil.copy2(src, destination / name)
            result.retrieved.append(name)
            seen.add(name)
        else:
            result.missing.append(name)
    for pattern in output_patterns:
        matches = sorted(run_dir.glob(pattern))
        matches = [m for m in matches if m.name not in seen and m.is_file()]
        if not matches:
            if pattern not in ALWAYS_FETCHED:
                result.missing.append(pattern)
            continue
        for src in matches:
            shutil.copy2(src, destination / src.name)
            result.retrieved.append(src.name)
            seen.add(src.name)
    return result


class ExecutionBackend:
    """Uniform interface over heterogeneous execution systems.

    Subclasses fill in the _impl methods; this base tracks call counters and
    enforces the no-concurrent-poll contract (the reentrancy counter is the
    proof the monitor never overlaps polls of one backend).
    """

    type_name = "Backend"
    requires_credential = False
    supports_bulk = False
    events_visible = True  # whether the monitor may read the job's event spool

    def __init__(self):
        self._lock = threading.RLock()
        self._poll_depth = 0
        self.max_poll_concurrency = 0
        self.counters = {"submit": 0, "bulk_submit": 0, "poll": 0, "kill": 0, "fetch": 0}

    # -- interface ----------------------------------------------------------

    def submit(self, desc: BackendJobDescription) -> BackendHandle:
        desc.validate()
        with self._lock:
            self.counters["submit"] += 1
            return self._submit_impl(desc)

    def bulk_submit(self, descs) -> list[BackendHandle]:
        """Submit many descriptions; one collection call when supported,
        transparent per-job fallback otherwise."""
        descs = list(descs)
        if not descs:
            return []
        if not self.supports_bulk:
            return [self.submit(desc) for desc in descs]
        for desc in descs:
            desc.validate()
        with self._lock:
            self.counters["bulk_submit"] += 1
            return self._bulk_submit_impl(descs)

    def kill(self, handle: BackendHandle):
        with self._lock:
            self.counters["kill"] += 1
            self._kill_impl(handle)

    def poll(self, items) -> list[StatusReport]:
        items = list(items)
        with self._lock:
            self._poll_depth += 1
            depth = self._poll_depth
            self.max_poll_concurrency = max(self.max_poll_concurrency, depth)
        try:
            if depth > 1:
                raise AssertionError(
                    f"concurrent poll detected on backend {self.type_name}"
                )
            self.counters["poll"] += 1
            return self._poll_impl(items)
        finally:
            with self._lock:
                self._poll_depth -= 1

    def fetch_output(self, handle: BackendHandle, destination, output_patterns,
                     run_dir=None) -> FetchResult:
        with self._lock:
            self.counters["fetch"] += 1
            return self._fetch_impl(handle, Path(destination), list(output_patterns),
                                    run_dir)

    def spool_dir(self, handle: BackendHandle):
        """Local-visible directory with the job's event spool; None means
        "use the workspace run directory"."""
        return None

    # -- hooks ------------------------------------------------------------------

    def _submit_impl(self, desc) -> BackendHandle:
        raise NotImplementedError

    def _bulk_submit_impl(self, descs) -> list[BackendHandle]:
        raise NotImplementedError

    def _kill_impl(self, handle):
        raise NotImplementedError

    def _poll_impl(self, items) -> list[StatusReport]:
        raise NotImplementedError

    def _fetch_impl(self, handle, destination, output_patterns, run_dir) -> FetchResult:
        raise NotImplementedError
