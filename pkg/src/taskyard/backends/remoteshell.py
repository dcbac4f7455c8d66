"""Remote-shell backend: the wrapper is staged into a remote working
directory and launched through a configurable command template.

The launcher template is split into tokens first and the placeholders
``{wrapper}``, ``{workdir}`` and ``{host}`` are substituted per token, so
paths never need shell quoting.  The default template is a local loopback
launcher, which keeps the transport testable without an ssh daemon;
production setups point it at an ssh command line over a shared filesystem.
"""

from __future__ import annotations

import logging
import shlex
import shutil
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..core import BackendHandle, TransitionEvent
from ..errors import AlreadyFinished, TransportError, UnknownHandle
from ..plugins import Access, AttributeDescriptor, Category, PluginSchema, ValueType
from .base import (
    ExecutionBackend,
    FetchResult,
    StatusReport,
    collect_run_outputs,
    command_log,
    pid_alive,
    read_exit_code,
    terminate_group,
)

logger = logging.getLogger(__name__)

DEFAULT_LAUNCHER = "/bin/sh -c 'cd {workdir} && exec /bin/sh {wrapper}'"

REMOTESHELL_SCHEMA = PluginSchema(
    plugin_name="RemoteShell",
    category=Category.BACKEND,
    version=1,
    doc="Launch the wrapper on another machine through a shell command template.",
    attributes=[
        AttributeDescriptor("host", ValueType.STRING, default="localhost",
                            doc="Host placeholder passed to the launcher template."),
        AttributeDescriptor("id", ValueType.STRING, Access.READ_ONLY, doc="Launcher process id."),
        AttributeDescriptor("status", ValueType.STRING, Access.READ_ONLY, doc="Raw status as last reported."),
        AttributeDescriptor("actualhost", ValueType.STRING, Access.READ_ONLY, doc="Host the job was sent to."),
    ],
)


@dataclass
class RemoteShellConfig:
    launcher: str = DEFAULT_LAUNCHER
    remote_root: Optional[Path] = None  # required; per-job workdirs live here


class RemoteShellBackend(ExecutionBackend):
    type_name = "RemoteShell"

    def __init__(self, config: RemoteShellConfig):
        super().__init__()
        if config.remote_root is None:
            raise TransportError("RemoteShell needs a remote_root directory")
        self.config = config
        self.remote_root = Path(config.remote_root)
        self.remote_root.mkdir(parents=True, exist_ok=True)
        self._state: dict[str, dict] = {}

    def _workdir(self, job_fqid: str) -> Path:
        return self.remote_root / job_fqid

    def _submit_impl(self, desc) -> BackendHandle:
        workdir = self._workdir(desc.job_fqid)
        workdir.mkdir(parents=True, exist_ok=True)
        # stage the wrapper and run-dir contents (loopback: plain copies)
        for item in Path(desc.run_dir).iterdir():
            if item.is_file():
                shutil.copy2(item, workdir / item.name)
        wrapper = workdir / Path(desc.wrapper_path).name
        host = desc.resource_hints.get("host", "localhost")
        argv = [
            token.format(wrapper=str(wrapper), workdir=str(workdir), host=host)
            for token in shlex.split(self.config.launcher)
        ]
        command_log.info("exec: %s", shlex.join(argv))
        try:
            proc = subprocess.Popen(
                argv,
                stdout=subprocess.DEVNULL,
                stderr=subprocess.DEVNULL,
                start_new_session=True,
            )
        except OSError as exc:
            raise TransportError(f"launcher failed: {exc}")
        backend_id = str(proc.pid)
        self._state[backend_id] = {
            "proc": proc,
            "workdir": workdir,
            "killed": False,
        }
        return BackendHandle(
            backend_id=backend_id,
            raw_status="submitted",
            actual_host=host,
        )

    def _kill_impl(self, handle):
        info = self._state.get(handle.backend_id)
        if info is not None:
            info["killed"] = True
        alive = terminate_group(int(handle.backend_id))
        if not alive:
            logger.info("kill of %s: already finished", handle.backend_id)
            raise AlreadyFinished(f"job {handle.backend_id} already finished")

    def _poll_impl(self, items):
        reports = []
        for item in items:
            handle = item.handle
            info = self._state.get(handle.backend_id)
            workdir = info["workdir"] if info else None
            if workdir is None:
                reports.append(StatusReport(handle.backend_id, "lost",
                                            TransitionEvent.BACKEND_DONE_ERR))
                continue
            exit_code = read_exit_code(workdir)
            if exit_code is not None:
                if info.get("proc") is not None:
                    info["proc"].poll()
                event = (TransitionEvent.BACKEND_DONE_OK if exit_code == 0
                         else TransitionEvent.BACKEND_DONE_ERR)
                reports.append(StatusReport(handle.backend_id, "done", event, exit_code))
            elif info.get("killed"):
                reports.append(StatusReport(handle.backend_id, "killed", None))
            elif (info.get("proc").poll() is None
                  if info.get("proc") is not None
                  else pid_alive(int(handle.backend_id))):
                reports.append(StatusReport(handle.backend_id, "running",
                                            TransitionEvent.BACKEND_RUNNING))
            else:
                reports.append(StatusReport(handle.backend_id, "lost",
                                            TransitionEvent.BACKEND_DONE_ERR))
        return reports

    def _fetch_impl(self, handle, destination, output_patterns, run_dir) -> FetchResult:
        info = self._state.get(handle.backend_id)
        if info is None:
            raise UnknownHandle(f"no workdir known for {handle.backend_id}")
        return collect_run_outputs(info["workdir"], destination, output_patterns)

    def spool_dir(self, handle: BackendHandle) -> Optional[Path]:
        """Local-visible directory holding the job's event spool, if any."""
        info = self._state.get(handle.backend_id)
        return info["workdir"] if info else None
