"""Simulated batch system: named queues with slot limits, FIFO scheduling,
walltime enforcement and a poll-driven discrete clock."""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from ..core import BackendHandle, TransitionEvent
from ..errors import AlreadyFinished, QueueUnknown, UnknownHandle
from ..plugins import Access, AttributeDescriptor, Category, PluginSchema, ValueType
from .base import (
    ExecutionBackend,
    FetchResult,
    StatusReport,
    collect_run_outputs,
    read_exit_code,
    spawn_wrapper,
    terminate_group,
)

logger = logging.getLogger(__name__)

BATCHSIM_SCHEMA = PluginSchema(
    plugin_name="BatchSim",
    category=Category.BACKEND,
    version=1,
    doc="Submit to a simulated batch queue.",
    attributes=[
        AttributeDescriptor("queue", ValueType.STRING, doc="Queue to submit to; the system default queue is used when left empty."),
        AttributeDescriptor("id", ValueType.STRING, Access.READ_ONLY, doc="Batch job identifier."),
        AttributeDescriptor("status", ValueType.STRING, Access.READ_ONLY, doc="Status as reported by the batch system."),
        AttributeDescriptor("actualqueue", ValueType.STRING, Access.READ_ONLY, doc="Queue the job was actually submitted to."),
    ],
)


@dataclass
class QueueConfig:
    slots: int = 2
    max_walltime_s: int = 3600


@dataclass
class BatchSimConfig:
    queues: dict[str, QueueConfig] = field(
        default_factory=lambda: {"default": QueueConfig()}
    )
    default_queue: str = "default"
    tick_interval_ms: int = 200

    def __post_init__(self):
        if self.default_queue not in self.queues:
            raise QueueUnknown(
                f"default queue {self.default_queue!r} not configured"
            )


class BatchSimBackend(ExecutionBackend):
    type_name = "BatchSim"

    def __init__(self, config: Optional[BatchSimConfig] = None):
        super().__init__()
        self.config = config or BatchSimConfig()
        self._jobs: dict[str, dict] = {}
        self._queued: dict[str, deque] = {q: deque() for q in self.config.queues}
        self._running: dict[str, list] = {q: [] for q in self.config.queues}
        self._seq = 0
        self.sim_time = 0.0
        self._last_wall_tick = time.monotonic()

    # -- submission -----------------------------------------------------------

    def _submit_impl(self, desc) -> BackendHandle:
        queue = desc.resource_hints.get("queue") or self.config.default_queue
        if queue not in self.config.queues:
            raise QueueUnknown(f"queue {queue!r} not configured")
        self._seq += 1
        backend_id = f"bsim-{self._seq}"
        self._jobs[backend_id] = {
            "desc": desc,
            "queue": queue,
            "status": "queued",
            "proc": None,
            "started_at": None,
            "exit_code": None,
        }
        self._queued[queue].append(backend_id)
        return BackendHandle(
            backend_id=backend_id,
            raw_status="queued",
            actual_queue=queue,
        )

    # -- simulation clock ---------------------------------------------------------

    def sim_tick(self) -> list[StatusReport]:
        """Advance the simulated clock one interval: finish and fail running
        jobs, then start queued ones while slots are free (FIFO per queue)."""
        with self._lock:
            self.sim_time += self.config.tick_interval_ms / 1000.0
            reports = []
            for queue, qconf in self.config.queues.items():
                still_running = []
                for backend_id in self._running[queue]:
                    info = self._jobs[backend_id]
                    exit_code = read_exit_code(info["desc"].run_dir)
                    if info["proc"] is not None:
                        info["proc"].poll()
                    if exit_code is not None:
                        info["status"] = "done"
                        info["exit_code"] = exit_code
                        reports.append(self._report(backend_id))
                    elif self.sim_time - info["started_at"] >= qconf.max_walltime_s:
                        if info["proc"] is not None:
                            terminate_group(info["proc"].pid)
                        info["status"] = "walltime exceeded"
                        reports.append(self._report(backend_id))
                    else:
                        still_running.append(backend_id)
                self._running[queue] = still_running
                while (len(self._running[queue]) < qconf.slots
                       and self._queued[queue]):
                    backend_id = self._queued[queue].popleft()
                    info = self._jobs[backend_id]
                    info["proc"] = spawn_wrapper(
                        info["desc"].wrapper_path, info["desc"].run_dir
                    )
                    info["status"] = "running"
                    info["started_at"] = self.sim_time
                    self._running[queue].append(backend_id)
                    reports.append(self._report(backend_id))
            return reports

    def _auto_tick(self):
        """Poll-driven clock: one sim tick per elapsed wall interval."""
        now = time.monotonic()
        interval = self.config.tick_interval_ms / 1000.0
        ticks = int((now - self._last_wall_tick) / interval)
        ticks = min(ticks, 100)  # bound catch-up after long pauses
        for _ in range(ticks):
            self.sim_tick()
        if ticks:
            self._last_wall_tick = now

    # -- reporting ---------------------------------------------------------------

    def _report(self, backend_id: str) -> StatusReport:
        info = self._jobs.get(backend_id)
        if info is None:
            return StatusReport(backend_id, "lost", TransitionEvent.BACKEND_DONE_ERR)
        status = info["status"]
        if status == "queued":
            return StatusReport(backend_id, "queued", None)
        if status == "running":
            return StatusReport(backend_id, "running", TransitionEvent.BACKEND_RUNNING)
        if status == "done":
            exit_code = info["exit_code"]
            event = (TransitionEvent.BACKEND_DONE_OK if exit_code == 0
                     else TransitionEvent.BACKEND_DONE_ERR)
            return StatusReport(backend_id, "done", event, exit_code)
        if status == "walltime exceeded":
            return StatusReport(backend_id, "walltime exceeded",
                                TransitionEvent.BACKEND_DONE_ERR)
        if status == "killed":
            return StatusReport(backend_id, "killed", None)
        return StatusReport(backend_id, "lost", TransitionEvent.BACKEND_DONE_ERR)

    def _poll_impl(self, items):
        self._auto_tick()
        return [self._report(item.handle.backend_id) for item in items]

    # -- control ----------------------------------------------------------------

    def _kill_impl(self, handle):
        info = self._jobs.get(handle.backend_id)
        if info is None:
            raise UnknownHandle(f"unknown batch job {handle.backend_id}")
        if info["status"] == "queued":
            self._queued[info["queue"]].remove(handle.backend_id)
            info["status"] = "killed"
            return
        if info["status"] == "running":
            if info["proc"] is not None:
                terminate_group(info["proc"].pid)
            self._running[info["queue"]].remove(handle.backend_id)
            info["status"] = "killed"
            return
        logger.info("kill of %s: already finished", handle.backend_id)
        raise AlreadyFinished(f"job {handle.backend_id} already finished")

    def _fetch_impl(self, handle, destination, output_patterns, run_dir) -> FetchResult:
        info = self._jobs.get(handle.backend_id)
        source = info["desc"].run_dir if info else run_dir
        if source is None:
            raise UnknownHandle(f"no run directory known for {handle.backend_id}")
        return collect_run_outputs(source, destination, output_patterns)

    # -- introspection (used by conservation tests) -------------------------------

    def queue_counts(self) -> dict:
        with self._lock:
            return {
                queue: {
                    "queued": len(self._queued[queue]),
                    "running": len(self._running[queue]),
                    "finished": sum(
                        1 for i in self._jobs.values()
                        if i["queue"] == queue
                        and i["status"] in ("done", "walltime exceeded", "killed")
                    ),
                }
                for queue in self.config.queues
            }
