"""Local backend: wrapper runs as a detached child process on this host."""

from __future__ import annotations

import logging
import socket

from ..core import BackendHandle, TransitionEvent
from ..errors import AlreadyFinished, UnknownHandle
from ..plugins import Access, AttributeDescriptor, Category, PluginSchema, ValueType
from .base import (
    ExecutionBackend,
    FetchResult,
    StatusReport,
    collect_run_outputs,
    pid_alive,
    read_exit_code,
    spawn_wrapper,
    terminate_group,
)

logger = logging.getLogger(__name__)

LOCAL_SCHEMA = PluginSchema(
    plugin_name="Local",
    category=Category.BACKEND,
    version=1,
    doc="Run the job as a process on the machine hosting the daemon.",
    attributes=[
        AttributeDescriptor("id", ValueType.STRING, Access.READ_ONLY, doc="Process id of the wrapper."),
        AttributeDescriptor("status", ValueType.STRING, Access.READ_ONLY, doc="Raw status as last reported."),
        AttributeDescriptor("actualhost", ValueType.STRING, Access.READ_ONLY, doc="Host the job ran on."),
    ],
)


class LocalBackend(ExecutionBackend):
    type_name = "Local"

    def __init__(self):
        super().__init__()
        self._state: dict[str, dict] = {}

    def _submit_impl(self, desc) -> BackendHandle:
        proc = spawn_wrapper(desc.wrapper_path, desc.run_dir)
        backend_id = str(proc.pid)
        self._state[backend_id] = {
            "proc": proc,
            "run_dir": desc.run_dir,
            "killed": False,
        }
        return BackendHandle(
            backend_id=backend_id,
            raw_status="submitted",
            actual_host=socket.gethostname(),
        )

    def _kill_impl(self, handle):
        info = self._state.get(handle.backend_id)
        pid = int(handle.backend_id)
        if info is not None:
            info["killed"] = True
        alive = terminate_group(pid)
        if not alive:
            logger.info("kill of %s: already finished", handle.backend_id)
            raise AlreadyFinished(f"job {handle.backend_id} already finished")

    def _poll_impl(self, items):
        reports = []
        for item in items:
            reports.append(self._poll_one(item))
        return reports

    def _poll_one(self, item) -> StatusReport:
        handle = item.handle
        info = self._state.get(handle.backend_id)
        run_dir = (info or {}).get("run_dir") or item.run_dir
        if run_dir is None:
            return StatusReport(handle.backend_id, "lost",
                                TransitionEvent.BACKEND_DONE_ERR)
        exit_code = read_exit_code(run_dir)
        if exit_code is not None:
            if info is not None and info.get("proc") is not None:
                info["proc"].poll()  # reap
            event = (TransitionEvent.BACKEND_DONE_OK if exit_code == 0
                     else TransitionEvent.BACKEND_DONE_ERR)
            return StatusReport(handle.backend_id, "done", event, exit_code)
        if info is not None and info.get("killed"):
            return StatusReport(handle.backend_id, "killed", None)
        if info is not None and info.get("proc") is not None:
            alive = info["proc"].poll() is None
        else:
            alive = pid_alive(int(handle.backend_id))
        if alive:
            return StatusReport(handle.backend_id, "running",
                                TransitionEvent.BACKEND_RUNNING)
        # process gone without an exit-code file
        return StatusReport(handle.backend_id, "lost",
                            TransitionEvent.BACKEND_DONE_ERR)

    def _fetch_impl(self, handle, destination, output_patterns, run_dir) -> FetchResult:
        info = self._state.get(handle.backend_id)
        source = (info or {}).get("run_dir") or run_dir
        if source is None:
            raise UnknownHandle(f"no run directory known for {handle.backend_id}")
        return collect_run_outputs(source, destination, output_patterns)
