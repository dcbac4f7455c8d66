"""Mock grid backend: bulk submission, configurable submit latency and
fault injection, standing in for real grid middleware so every grid code
path can be exercised offline.

Jobs not pre-destined to fail execute their wrapper inside the backend's
spool directory; outputs are fetched from there.  Pre-destined failures
never run and surface as an "aborted" raw status.
"""

from __future__ import annotations

import logging
import random
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..core import BackendHandle, TransitionEvent
from ..errors import AlreadyFinished, ConfigError, UnknownHandle
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

MOCKGRID_SCHEMA = PluginSchema(
    plugin_name="MockGrid",
    category=Category.BACKEND,
    version=1,
    doc="Simulated grid with bulk submission, latency and fault injection.",
    attributes=[
        AttributeDescriptor("requirements", ValueType.STRING,
                            doc="Free-form resource requirement hint (informational)."),
        AttributeDescriptor("id", ValueType.STRING, Access.READ_ONLY, doc="Grid job identifier."),
        AttributeDescriptor("status", ValueType.STRING, Access.READ_ONLY, doc="Raw grid status."),
        AttributeDescriptor("actualhost", ValueType.STRING, Access.READ_ONLY, doc="Worker node the job landed on."),
        AttributeDescriptor("destined_fail", ValueType.BOOLEAN, Access.INTERNAL,
                            doc="Fault-injection verdict fixed at submission."),
    ],
)


@dataclass
class LatencySpec:
    """Submit latency: fixed milliseconds or uniform over [lo, hi] milliseconds."""

    kind: str = "fixed"
    value_ms: float = 0.0
    lo_ms: float = 0.0
    hi_ms: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "LatencySpec":
        text = text.strip()
        if text.startswith("fixed:"):
            return cls("fixed", value_ms=float(text.split(":", 1)[1]))
        if text.startswith("uniform:"):
            lo, hi = text.split(":", 1)[1].split(",")
            return cls("uniform", lo_ms=float(lo), hi_ms=float(hi))
        raise ConfigError(f"bad latency spec {text!r}; use fixed:MS or uniform:LO,HI")

    def sample(self, rng: random.Random) -> float:
        if self.kind == "fixed":
            return self.value_ms / 1000.0
        return rng.uniform(self.lo_ms, self.hi_ms) / 1000.0


@dataclass
class MockGridConfig:
    submit_latency: LatencySpec = field(default_factory=LatencySpec)
    failure_rate: float = 0.0
    supports_bulk: bool = True
    max_concurrent: int = 64
    seed: int = 42
    spool_root: Optional[Path] = None

    def __post_init__(self):
        if not 0.0 <= self.failure_rate <= 1.0:
            raise ConfigError(f"failure_rate must be in [0,1], got {self.failure_rate}")


class MockGridBackend(ExecutionBackend):
    type_name = "MockGrid"
    requires_credential = True
    events_visible = False  # worker-node spools are not client-visible

    def __init__(self, config: Optional[MockGridConfig] = None):
        super().__init__()
        self.config = config or MockGridConfig()
        self.supports_bulk = self.config.supports_bulk
        if self.config.spool_root is None:
            raise ConfigError("MockGrid needs a spool_root directory")
        self.spool_root = Path(self.config.spool_root)
        self.spool_root.mkdir(parents=True, exist_ok=True)
        self._rng = random.Random(self.config.seed)
        self._state: dict[str, dict] = {}
        self._seq = 0

    # -- submission ------------------------------------------------------------

    def _register(self, desc) -> BackendHandle:
        self._seq += 1
        backend_id = f"grid-{self._seq}"
        destined_fail = self._rng.random() < self.config.failure_rate
        latency = self.config.submit_latency.sample(self._rng)
        self._state[backend_id] = {
            "desc": desc,
            "submitted_at": time.monotonic(),
            "latency": latency,
            "destined_fail": destined_fail,
            "status": "scheduled",
            "proc": None,
        }
        return BackendHandle(
            backend_id=backend_id,
            raw_status="scheduled",
            actual_host=f"worker{self._seq % 17:02d}.mock.grid",
        )

    def _submit_impl(self, desc) -> BackendHandle:
        return self._register(desc)

    def _bulk_submit_impl(self, descs) -> list[BackendHandle]:
        # one collection-level call covering the whole list
        return [self._register(desc) for desc in descs]

    def destined_to_fail(self, handle: BackendHandle) -> bool:
        info = self._state.get(handle.backend_id)
        if info is None:
            raise UnknownHandle(f"unknown grid job {handle.backend_id}")
        return info["destined_fail"]

    # -- lifecycle ---------------------------------------------------------------

    def _spool_dir(self, backend_id: str) -> Path:
        return self.spool_root / backend_id

    def _running_count(self) -> int:
        return sum(1 for i in self._state.values() if i["status"] == "running")

    def _advance(self, backend_id: str) -> StatusReport:
        info = self._state.get(backend_id)
        if info is None:
            return StatusReport(backend_id, "lost", TransitionEvent.BACKEND_DONE_ERR)
        status = info["status"]
        if status == "killed":
            return StatusReport(backend_id, "killed", None)
        if status in ("done", "aborted"):
            return self._terminal_report(backend_id, info)
        elapsed = time.monotonic() - info["submitted_at"]
        if elapsed < info["latency"]:
            return StatusReport(backend_id, "scheduled", None)
        if info["destined_fail"]:
            info["status"] = "aborted"
            return self._terminal_report(backend_id, info)
        if info["proc"] is None:
            if self._running_count() >= self.config.max_concurrent:
                return StatusReport(backend_id, "scheduled", None)
            spool = self._spool_dir(backend_id)
            spool.mkdir(parents=True, exist_ok=True)
            for item in Path(info["desc"].run_dir).iterdir():
                if item.is_file():
                    shutil.copy2(item, spool / item.name)
            wrapper = spool / Path(info["desc"].wrapper_path).name
            info["proc"] = spawn_wrapper(wrapper, spool)
            info["status"] = "running"
            return StatusReport(backend_id, "running", TransitionEvent.BACKEND_RUNNING)
        exit_code = read_exit_code(self._spool_dir(backend_id))
        if exit_code is None and info["proc"].poll() is None:
            return StatusReport(backend_id, "running", TransitionEvent.BACKEND_RUNNING)
        info["proc"].poll()
        info["status"] = "done"
        info["exit_code"] = exit_code
        return self._terminal_report(backend_id, info)

    def _terminal_report(self, backend_id: str, info: dict) -> StatusReport:
        if info["status"] == "aborted":
            return StatusReport(backend_id, "aborted", TransitionEvent.BACKEND_DONE_ERR)
        exit_code = info.get("exit_code")
        if exit_code is None:
            return StatusReport(backend_id, "done", TransitionEvent.BACKEND_DONE_ERR)
        event = (TransitionEvent.BACKEND_DONE_OK if exit_code == 0
                 else TransitionEvent.BACKEND_DONE_ERR)
        return StatusReport(backend_id, "done", event, exit_code)

    def _poll_impl(self, items):
        return [self._advance(item.handle.backend_id) for item in items]

    def _kill_impl(self, handle):
        info = self._state.get(handle.backend_id)
        if info is None:
            raise UnknownHandle(f"unknown grid job {handle.backend_id}")
        if info["status"] in ("done", "aborted", "killed"):
            logger.info("kill of %s: already finished", handle.backend_id)
            raise AlreadyFinished(f"job {handle.backend_id} already finished")
        if info["proc"] is not None:
            terminate_group(info["proc"].pid)
        info["status"] = "killed"

    def _fetch_impl(self, handle, destination, output_patterns, run_dir) -> FetchResult:
        info = self._state.get(handle.backend_id)
        if info is None:
            raise UnknownHandle(f"unknown grid job {handle.backend_id}")
        spool = self._spool_dir(handle.backend_id)
        if not spool.exists():
            # pre-destined failure: nothing ever ran
            result = FetchResult()
            result.missing.extend(["stdout", "stderr", "__exitcode__"])
            result.missing.extend(output_patterns)
            return result
        return collect_run_outputs(spool, destination, output_patterns)
