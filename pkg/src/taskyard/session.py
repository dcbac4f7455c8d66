"""The session wires registry, repository, workspace, backends, credential,
event bus and monitor together, and serializes every mutating verb through
one command lock (readers work on snapshots).
"""

from __future__ import annotations

import logging
import threading
from pathlib import Path
from typing import Optional

from . import core
from .backends import (
    BackendJobDescription,
    PollItem,
    SensorConfig,
    generate_wrapper,
)
from .builtins import build_backends, build_registry
from .core import Job, JobStatus, TransitionEvent, derive_master_status
from .errors import (
    AlreadyFinished,
    GateError,
    IllegalTransition,
    JobActive,
    UnknownJob,
)
from .lifecycle import (
    EventBus,
    EventKind,
    FileSink,
    MockCredential,
    MonitorConfig,
    MonitorEvent,
    MonitorService,
    StreamLog,
)
from .persistence import JobRepository, JobSelection, Workspace
from .plugins import Category
from .tasks import merge_job, split_job

logger = logging.getLogger(__name__)

_JOB_DOCUMENT_KEYS = {
    "name", "application", "backend", "inputdata", "outputdata",
    "splitter", "merger", "input_sandbox", "output_sandbox",
}


class Session:
    """Owns one repository and exposes the task-management verbs."""

    def __init__(self, repository_root, workspace_root, *,
                 enabled_plugins: Optional[dict] = None,
                 backend_configs: Optional[dict] = None,
                 registry=None,
                 credential: Optional[MockCredential] = None,
                 monitor_config: Optional[MonitorConfig] = None,
                 sensor_config: Optional[SensorConfig] = None,
                 event_log_path=None,
                 event_retention: int = 5000,
                 acquire_lock: bool = True):
        self.registry = registry or build_registry(enabled_plugins)
        self.workspace = Workspace(workspace_root)
        self.repository = JobRepository(repository_root, self.registry,
                                        workspace=self.workspace,
                                        acquire_lock=acquire_lock)
        self.backends = build_backends(workspace_root, backend_configs,
                                       enabled_plugins)
        self.credential = credential
        self.sensor_config = sensor_config or SensorConfig()

        self.bus = EventBus()
        self.stream_log = StreamLog(retention=event_retention)
        self.bus.register_sensor(self.stream_log)
        if event_log_path:
            self.bus.register_sensor(FileSink(event_log_path))

        self.monitor = MonitorService(self, monitor_config)
        self._cmd_lock = threading.RLock()
        self._spool_offsets: dict[str, int] = {}
        self._robot = None

    # -- lifecycle of the session itself -----------------------------------

    def close(self):
        if self.monitor.running:
            self.monitor.stop()
        self.bus.stop()
        self.repository.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def robot(self):
        if self._robot is None:
            from .robot import RobotRunner

            self._robot = RobotRunner(self)
        return self._robot

    # -- job lookup -----------------------------------------------------------

    def get_job(self, job_id: int) -> Job:
        return self.repository.load(int(job_id))

    def get_job_fq(self, fqid) -> Job:
        """Resolve "3" to a master job and "3.1" to its subjob."""
        text = str(fqid)
        if "." in text:
            master_part, sub_part = text.split(".", 1)
            master = self.get_job(int(master_part))
            index = int(sub_part)
            for sub in master.subjobs:
                if sub.subjob_index == index:
                    return sub
            raise UnknownJob(f"job {master.id} has no subjob {index}")
        return self.get_job(int(text))

    # -- creation -----------------------------------------------------------

    def create_job(self, document: Optional[dict] = None, **kwargs) -> Job:
        fields = dict(document or {})
        fields.update(kwargs)
        unknown = set(fields) - _JOB_DOCUMENT_KEYS
        if unknown:
            from .errors import ConfigError

            raise ConfigError(f"unknown job fields: {sorted(unknown)}")
        application = fields.pop("application", None)
        backend = fields.pop("backend", None)
        if application is None or backend is None:
            from .errors import ConfigError

            raise ConfigError("a job needs both an application and a backend")
        with self._cmd_lock:
            return core.new_job(self.registry, self.repository,
                                application, backend, **fields)

    def copy(self, job_id: int, **overrides) -> Job:
        with self._cmd_lock:
            source = self.get_job(job_id)
            return core.copy_job(self.registry, self.repository, source, **overrides)

    # -- submission pipeline ------------------------------------------------------

    def _gate(self, operation: str, backend) -> None:
        if not backend.requires_credential:
            return
        if self.credential is None:
            raise GateError(
                f"backend {backend.type_name} requires a credential and none "
                "is configured",
                operation=operation,
            )
        self.credential.gate(operation, backend.type_name)

    def _backend_for(self, job: Job):
        return self.backends[job.backend.type_name]

    def _resource_hints(self, job: Job) -> dict:
        hints = {}
        for key in ("queue", "host"):
            if job.backend.schema.has_attribute(key):
                value = job.backend.get(key)
                if value:
                    hints[key] = value
        return hints

    def _configure(self, job: Job):
        behavior = self.registry.behavior_of(Category.APPLICATION,
                                             job.application.type_name)
        return behavior.configure(job.application, job)

    def _build_description(self, job: Job, configured, handler) -> BackendJobDescription:
        translated = handler.translate(configured, job.backend, None)
        self.workspace.stage_input(job)
        run_dir = self.workspace.prepare_run(job)
        wrapper = generate_wrapper(configured, job.fqid, self.sensor_config, run_dir)
        return BackendJobDescription(
            job_fqid=job.fqid,
            wrapper_path=wrapper,
            run_dir=run_dir,
            input_files=list(translated.get("input_files", [])),
            output_patterns=list(translated.get("output_patterns",
                                                job.output_sandbox)),
            resource_hints=self._resource_hints(job),
        )

    def _sync_backend_attrs(self, job: Job):
        handle = job.backend_handle
        if handle is None:
            return
        comp = job.backend
        mapping = {
            "id": handle.backend_id,
            "status": handle.raw_status,
            "actualqueue": handle.actual_queue,
            "actualhost": handle.actual_host,
        }
        for key, value in mapping.items():
            if value is not None and comp.schema.has_attribute(key):
                comp.set_system(key, value)

    def _on_status_change(self, job: Job, old: JobStatus, event: TransitionEvent):
        self._emit(EventKind.STATUS_CHANGED, job,
                   old=old.value, new=job.status.value, event=event.value)

    def _transition(self, job: Job, event) -> JobStatus:
        status = core.transition(job, event, emit=self._on_status_change)
        self.repository.save(self.get_job(job.id))
        return status

    def _emit(self, kind, job: Optional[Job] = None, **payload):
        self.bus.emit(MonitorEvent(
            kind=kind,
            job_id=job.id if job is not None else None,
            subjob_index=job.subjob_index if job is not None else None,
            payload={k: str(v) for k, v in payload.items() if v is not None},
        ))

    def submit(self, job_id: int) -> Job:
        with self._cmd_lock:
            job = self.get_job(job_id)
            if (job.status, TransitionEvent.SUBMIT_REQUESTED) not in core.TRANSITION_TABLE:
                raise IllegalTransition(job.status.value,
                                        TransitionEvent.SUBMIT_REQUESTED.value)
            job.ensure_modifiable()
            backend = self._backend_for(job)
            self._gate("submit", backend)
            configured = self._configure(job)
            handler = self.registry.resolve_handler(job.application.type_name,
                                                    job.backend.type_name)
            if job.splitter is not None:
                self._submit_split(job, handler, backend)
            else:
                desc = self._build_description(job, configured, handler)
                handle = backend.submit(desc)
                job.backend_handle = handle
                self._sync_backend_attrs(job)
            self._transition(job, TransitionEvent.SUBMIT_REQUESTED)
            self._emit(EventKind.SUBMITTED, job, backend=job.backend.type_name)
            return job

    def _submit_split(self, master: Job, handler, backend):
        master.subjobs = split_job(self.registry, master)
        for sub in master.subjobs:
            self.workspace.allocate(sub)
        descs = []
        for sub in master.subjobs:
            configured = self._configure(sub)
            descs.append(self._build_description(sub, configured, handler))
        handles = backend.bulk_submit(descs)
        for sub, handle in zip(master.subjobs, handles):
            sub.backend_handle = handle
            self._sync_backend_attrs(sub)
            core.transition(sub, TransitionEvent.BACKEND_ACCEPTED,
                            emit=self._on_status_change)
            self._emit(EventKind.SUBMITTED, sub, backend=sub.backend.type_name)

    def resubmit(self, job_id: int) -> Job:
        with self._cmd_lock:
            job = self.get_job(job_id)
            if (job.status, TransitionEvent.RESUBMIT_REQUESTED) not in core.TRANSITION_TABLE:
                raise IllegalTransition(job.status.value,
                                        TransitionEvent.RESUBMIT_REQUESTED.value)
            backend = self._backend_for(job)
            self._gate("submit", backend)
            handler = self.registry.resolve_handler(job.application.type_name,
                                                    job.backend.type_name)
            if job.subjobs:
                for sub in job.subjobs:
                    if sub.status in (JobStatus.FAILED, JobStatus.KILLED):
                        self._resubmit_one(sub, handler, backend,
                                           TransitionEvent.RESUBMIT_REQUESTED)
            else:
                self._resubmit_one(job, handler, backend, None)
            self._transition(job, TransitionEvent.RESUBMIT_REQUESTED)
            self._emit(EventKind.SUBMITTED, job, backend=job.backend.type_name,
                       resubmit=True)
            return job

    def _resubmit_one(self, job: Job, handler, backend, event):
        self._reset_run_dir(job)
        configured = self._configure(job)
        desc = self._build_description(job, configured, handler)
        job.backend_handle = backend.submit(desc)
        self._sync_backend_attrs(job)
        if event is not None:
            core.transition(job, event, emit=self._on_status_change)
            self._emit(EventKind.SUBMITTED, job, backend=job.backend.type_name,
                       resubmit=True)

    def _reset_run_dir(self, job: Job):
        run_dir = self.workspace.run_dir(job)
        for name in ("__exitcode__", "__events__", "stdout", "stderr"):
            path = run_dir / name
            if path.exists():
                path.unlink()
        self._spool_offsets.pop(job.fqid, None)

    # -- kill / remove ------------------------------------------------------------

    def kill(self, job_id: int) -> Job:
        with self._cmd_lock:
            job = self.get_job(job_id)
            if (job.status, TransitionEvent.KILL_REQUESTED) not in core.TRANSITION_TABLE:
                raise IllegalTransition(job.status.value,
                                        TransitionEvent.KILL_REQUESTED.value)
            if job.status is not JobStatus.NEW:
                backend = self._backend_for(job)
                self._gate("kill", backend)
                if job.subjobs:
                    for sub in job.subjobs:
                        if sub.status.is_active():
                            self._kill_at_backend(backend, sub)
                            core.transition(sub, TransitionEvent.KILL_REQUESTED,
                                            emit=self._on_status_change)
                elif job.backend_handle is not None:
                    self._kill_at_backend(backend, job)
            self._transition(job, TransitionEvent.KILL_REQUESTED)
            return job

    def _kill_at_backend(self, backend, job: Job):
        try:
            backend.kill(job.backend_handle)
        except AlreadyFinished:
            logger.info("job %s already finished at backend", job.fqid)

    def remove(self, job_id: int):
        with self._cmd_lock:
            job = self.get_job(job_id)
            if job.status.is_active():
                raise JobActive(
                    f"job {job.fqid} is {job.status.value}; kill it before removing"
                )
            self._spool_offsets.pop(job.fqid, None)
            for sub in job.subjobs:
                self._spool_offsets.pop(sub.fqid, None)
            self.repository.remove(job.id)

    # -- selection / inspection ------------------------------------------------------

    def select(self, **filters) -> JobSelection:
        return self.repository.select(session=self, **filters)

    def peek(self, fqid, filename: str = "stdout", last_n_lines=None) -> str:
        job = self.get_job_fq(fqid)
        return self.workspace.peek(job, filename, last_n_lines)

    def merge(self, job_id: int, permissive=None) -> list[str]:
        with self._cmd_lock:
            master = self.get_job(job_id)
            return merge_job(self.registry, master, self.workspace, permissive)

    # -- templates --------------------------------------------------------------

    def save_template(self, job_id: int, name: str = ""):
        with self._cmd_lock:
            job = self.get_job(job_id)
            return self.repository.save_template(job, name)

    def list_templates(self):
        return self.repository.list_templates()

    def instantiate_template(self, template_id: int, **overrides) -> Job:
        with self._cmd_lock:
            return self.repository.instantiate_template(template_id, **overrides)

    # -- credentials ----------------------------------------------------------------

    def credential_status(self) -> dict:
        if self.credential is None:
            return {"label": None, "state": "absent"}
        return self.credential.to_document()

    def credential_renew(self, extra_ttl_s=None) -> dict:
        if self.credential is None:
            raise GateError("no credential configured")
        self.credential.renew(extra_ttl_s)
        return self.credential.to_document()

    def credential_destroy(self) -> dict:
        if self.credential is None:
            raise GateError("no credential configured")
        self.credential.destroy()
        return self.credential.to_document()

    def emit_credential_warning(self, credential):
        self.bus.emit(MonitorEvent(
            kind=EventKind.CREDENTIAL_WARNING,
            payload={
                "label": credential.label,
                "remaining_s": f"{max(credential.remaining(), 0.0):.1f}",
            },
        ))

    # -- monitor integration ------------------------------------------------------

    def start_monitor(self) -> MonitorService:
        self.monitor.start()
        return self.monitor

    def stop_monitor(self):
        self.monitor.stop()

    def pump_monitor(self, rounds: int = 1, interval_s: float = 0.0):
        """Synchronously run poll cycles (embedded/scripted use)."""
        import time as _time

        for _ in range(rounds):
            self.monitor.pump_once()
            if interval_s:
                _time.sleep(interval_s)

    def wait_for(self, job_id: int, timeout_s: float = 30.0,
                 poll_s: float = 0.05) -> Job:
        """Block until the job is terminal, pumping inline when the monitor
        thread is not running."""
        import time as _time

        deadline = _time.monotonic() + timeout_s
        job = self.get_job(job_id)
        while not job.status.is_terminal():
            if _time.monotonic() > deadline:
                raise TimeoutError(f"job {job.fqid} still {job.status.value}")
            if not self.monitor.running:
                self.monitor.pump_once()
            _time.sleep(poll_s)
            job = self.get_job(job_id)
        return job

    def active_backend_names(self) -> list[str]:
        names = []
        with self._cmd_lock:
            for master in self.repository.all_jobs():
                for job in master.all_jobs():
                    if (job.status.is_active() and job.backend_handle is not None
                            and job.backend.type_name in self.backends
                            and job.backend.type_name not in names):
                        names.append(job.backend.type_name)
        return names

    def collect_poll_targets(self, backend_name: str):
        """Snapshot of (job, PollItem) pairs for one backend's active jobs."""
        targets = []
        with self._cmd_lock:
            for master in self.repository.all_jobs():
                for job in master.all_jobs():
                    if (job.status.is_active()
                            and job.backend.type_name == backend_name
                            and job.backend_handle is not None):
                        targets.append((job, PollItem(
                            handle=job.backend_handle,
                            run_dir=self.workspace.run_dir(job),
                        )))
        return targets

    def process_poll_results(self, backend_name: str, targets, reports):
        """Apply one poll cycle's findings: spool events first, then status."""
        backend = self.backends[backend_name]
        with self._cmd_lock:
            touched_masters = set()
            for index, (job, item) in enumerate(targets):
                if backend.events_visible:
                    self._ingest_spool(job, backend, item)
                if reports is None:
                    continue
                report = reports[index]
                if self._apply_report(job, backend, report) and job.is_subjob:
                    touched_masters.add(job.id)
            for master_id in touched_masters:
                self._update_master(self.get_job(master_id))

    # -- report application ---------------------------------------------------------

    def _apply_report(self, job: Job, backend, report) -> bool:
        """Returns True when the job reached a terminal state."""
        handle = job.backend_handle
        dirty = False
        if handle is not None and report.raw_status and \
                handle.raw_status != report.raw_status:
            handle.raw_status = report.raw_status
            self._sync_backend_attrs(job)
            dirty = True
        event = report.mapped_event
        if event is None:
            if dirty:
                self.repository.save(self.get_job(job.id))
            return False
        if event is TransitionEvent.BACKEND_RUNNING:
            if job.status is JobStatus.SUBMITTED:
                self._transition(job, TransitionEvent.BACKEND_RUNNING)
                if not backend.events_visible:
                    self._emit(EventKind.STARTED, job, synthesized=True)
            elif dirty:
                self.repository.save(self.get_job(job.id))
            return False
        if event in (TransitionEvent.BACKEND_DONE_OK,
                     TransitionEvent.BACKEND_DONE_ERR):
            if job.status.is_terminal():
                return False
            try:
                self._finalize(job, backend, report)
            except IllegalTransition as exc:
                logger.warning("skipping report for job %s: %s", job.fqid, exc)
                return False
            return True
        return False

    def _finalize(self, job: Job, backend, report):
        """Completion path: fetch outputs, validate, settle the final status."""
        try:
            self._gate("fetch", backend)
        except GateError as exc:
            logger.warning("deferring output retrieval for job %s: %s",
                           job.fqid, exc)
            return
        output_dir = self.workspace.output_dir(job)
        fetch = backend.fetch_output(job.backend_handle, output_dir,
                                     job.output_sandbox,
                                     run_dir=self.workspace.run_dir(job))
        for name in fetch.missing:
            logger.warning("job %s: output missing: %s", job.fqid, name)
        if report.exit_code is not None:
            job.backend_handle.exit_code = report.exit_code
        ok = report.mapped_event is TransitionEvent.BACKEND_DONE_OK
        reason = report.raw_status
        if ok:
            behavior = self.registry.behavior_of(Category.APPLICATION,
                                                 job.application.type_name)
            postprocess = getattr(behavior, "postprocess", None)
            if postprocess is not None:
                result = postprocess(job.application, job, output_dir)
                ok = result.ok
                reason = result.reason
        event = (TransitionEvent.BACKEND_DONE_OK if ok
                 else TransitionEvent.BACKEND_DONE_ERR)
        if not ok:
            logger.info("job %s failed validation: %s", job.fqid, reason)
        self._sync_backend_attrs(job)
        self._transition(job, event)
        if not backend.events_visible:
            self._emit(EventKind.COMPLETED, job, synthesized=True,
                       exit=job.backend_handle.exit_code, reason=reason or None)

    def _update_master(self, master: Job):
        if master.status.is_terminal() or not master.subjobs:
            return
        derived = derive_master_status([s.status for s in master.subjobs])
        if derived is master.status:
            return
        if derived is JobStatus.RUNNING:
            if master.status is JobStatus.SUBMITTED:
                self._transition(master, TransitionEvent.BACKEND_RUNNING)
            return
        if derived is JobStatus.COMPLETED:
            if master.merger is not None:
                try:
                    produced = merge_job(self.registry, master, self.workspace)
                    logger.info("job %s: auto-merged %s", master.fqid, produced)
                except Exception as exc:
                    logger.error("job %s: auto-merge failed: %s", master.fqid, exc)
                    self._transition(master, TransitionEvent.BACKEND_DONE_ERR)
                    return
            self._transition(master, TransitionEvent.BACKEND_DONE_OK)
        elif derived is JobStatus.FAILED:
            self._transition(master, TransitionEvent.BACKEND_DONE_ERR)
        elif derived is JobStatus.KILLED:
            self._transition(master, TransitionEvent.KILL_REQUESTED)

    # -- wrapper event ingestion -------------------------------------------------------

    _SPOOL_KINDS = {
        "started": EventKind.STARTED,
        "heartbeat": EventKind.HEARTBEAT,
        "output_line": EventKind.OUTPUT_LINE,
        "complete": EventKind.COMPLETED,
    }

    def _ingest_spool(self, job: Job, backend, item):
        from .backends.wrapper import parse_spool_line

        spool_dir = backend.spool_dir(job.backend_handle) or item.run_dir
        if spool_dir is None:
            return
        path = Path(spool_dir) / "__events__"
        if not path.exists():
            return
        offset = self._spool_offsets.get(job.fqid, 0)
        size = path.stat().st_size
        if size < offset:
            offset = 0  # spool was truncated (resubmit)
        if size == offset:
            return
        with open(path, "rb") as fh:
            fh.seek(offset)
            chunk = fh.read(size - offset)
        text = chunk.decode("utf-8", errors="replace")
        consumed = len(chunk)
        if text and not text.endswith("\n"):
            # keep the torn tail for the next cycle
            cut = text.rfind("\n") + 1
            consumed = len(text[:cut].encode("utf-8"))
            text = text[:cut]
        self._spool_offsets[job.fqid] = offset + consumed
        for line in text.splitlines():
            parsed = parse_spool_line(line)
            if parsed is None:
                continue
            _, kind, payload = parsed
            event_kind = self._SPOOL_KINDS.get(kind)
            if event_kind is None:
                continue
            if event_kind is EventKind.OUTPUT_LINE:
                self._emit(event_kind, job, line=payload)
            elif payload:
                self._emit(event_kind, job, info=payload)
            else:
                self._emit(event_kind, job)
