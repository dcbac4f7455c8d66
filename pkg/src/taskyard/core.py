"""Job data model, status state machine and master-status derivation."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Optional

from .errors import ConfigError, EmptySubjobs, IllegalTransition, JobNotModifiable
from .plugins import Category, ComponentInstance, PluginRegistry


class JobStatus(str, Enum):
    NEW = "new"
    SUBMITTED = "submitted"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"
    KILLED = "killed"

    def is_terminal(self) -> bool:
        return self in (JobStatus.COMPLETED, JobStatus.FAILED, JobStatus.KILLED)

    def is_active(self) -> bool:
        return self in (JobStatus.SUBMITTED, JobStatus.RUNNING)


class TransitionEvent(str, Enum):
    SUBMIT_REQUESTED = "submit_requested"
    BACKEND_ACCEPTED = "backend_accepted"
    BACKEND_RUNNING = "backend_running"
    BACKEND_DONE_OK = "backend_done_ok"
    BACKEND_DONE_ERR = "backend_done_err"
    KILL_REQUESTED = "kill_requested"
    RESUBMIT_REQUESTED = "resubmit_requested"


# The full table: (status, event) -> next status.  submit_requested is fired
# by the session once the backend has accepted the job; backend_accepted is
# the equivalent acceptance edge used when subjobs are marked individually.
TRANSITION_TABLE: dict[tuple[JobStatus, TransitionEvent], JobStatus] = {
    (JobStatus.NEW, TransitionEvent.SUBMIT_REQUESTED): JobStatus.SUBMITTED,
    (JobStatus.NEW, TransitionEvent.BACKEND_ACCEPTED): JobStatus.SUBMITTED,
    (JobStatus.SUBMITTED, TransitionEvent.BACKEND_RUNNING): JobStatus.RUNNING,
    (JobStatus.SUBMITTED, TransitionEvent.BACKEND_DONE_OK): JobStatus.COMPLETED,
    (JobStatus.RUNNING, TransitionEvent.BACKEND_DONE_OK): JobStatus.COMPLETED,
    (JobStatus.SUBMITTED, TransitionEvent.BACKEND_DONE_ERR): JobStatus.FAILED,
    (JobStatus.RUNNING, TransitionEvent.BACKEND_DONE_ERR): JobStatus.FAILED,
    (JobStatus.NEW, TransitionEvent.KILL_REQUESTED): JobStatus.KILLED,
    (JobStatus.SUBMITTED, TransitionEvent.KILL_REQUESTED): JobStatus.KILLED,
    (JobStatus.RUNNING, TransitionEvent.KILL_REQUESTED): JobStatus.KILLED,
    (JobStatus.FAILED, TransitionEvent.RESUBMIT_REQUESTED): JobStatus.SUBMITTED,
    (JobStatus.KILLED, TransitionEvent.RESUBMIT_REQUESTED): JobStatus.SUBMITTED,
}


def legal_events(status: JobStatus) -> list[TransitionEvent]:
    return [ev for (st, ev) in TRANSITION_TABLE if st is status]


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass
class BackendHandle:
    """Backend-reported identity and raw status for a submitted job."""

    backend_id: str
    raw_status: str = ""
    actual_queue: Optional[str] = None
    actual_host: Optional[str] = None
    exit_code: Optional[int] = None

    def to_document(self) -> dict:
        return {
            "backend_id": self.backend_id,
            "raw_status": self.raw_status,
            "actual_queue": self.actual_queue,
            "actual_host": self.actual_host,
            "exit_code": self.exit_code,
        }

    @classmethod
    def from_document(cls, doc: Optional[dict]) -> Optional["BackendHandle"]:
        if doc is None:
            return None
        return cls(
            backend_id=doc["backend_id"],
            raw_status=doc.get("raw_status", ""),
            actual_queue=doc.get("actual_queue"),
            actual_host=doc.get("actual_host"),
            exit_code=doc.get("exit_code"),
        )


@dataclass
class Job:
    """The central record composing application, backend, optional components,
    status and subjobs."""

    id: int
    application: ComponentInstance
    backend: ComponentInstance
    name: str = ""
    inputdata: Optional[ComponentInstance] = None
    outputdata: Optional[ComponentInstance] = None
    splitter: Optional[ComponentInstance] = None
    merger: Optional[ComponentInstance] = None
    input_sandbox: list[str] = field(default_factory=list)
    output_sandbox: list[str] = field(default_factory=list)
    status: JobStatus = JobStatus.NEW
    subjobs: list["Job"] = field(default_factory=list)
    backend_handle: Optional[BackendHandle] = None
    subjob_index: Optional[int] = None
    created_at: Optional[datetime] = None
    submitted_at: Optional[datetime] = None
    finished_at: Optional[datetime] = None
    read_only: bool = False  # set when a record loaded across a migration gap

    def __post_init__(self):
        if self.created_at is None:
            self.created_at = utcnow()
        for comp in self.components():
            comp.owner = self

    @property
    def fqid(self) -> str:
        """Job id as shown to users: "3" for a master, "3.1" for a subjob."""
        if self.subjob_index is None:
            return str(self.id)
        return f"{self.id}.{self.subjob_index}"

    @property
    def is_subjob(self) -> bool:
        return self.subjob_index is not None

    def components(self):
        for comp in (self.application, self.backend, self.inputdata,
                     self.outputdata, self.splitter, self.merger):
            if comp is not None:
                yield comp

    def is_modifiable(self) -> bool:
        return self.status is JobStatus.NEW and not self.read_only

    def ensure_modifiable(self):
        if self.read_only:
            raise JobNotModifiable(
                f"job {self.fqid} was loaded read-only (schema migration gap)"
            )
        if self.status is not JobStatus.NEW:
            raise JobNotModifiable(
                f"job {self.fqid} is {self.status.value}; copy it to make changes"
            )

    # -- user-path mutation (frozen after submission) ---------------------

    def set_name(self, name: str):
        self.ensure_modifiable()
        self.name = str(name)

    def set_input_sandbox(self, files):
        self.ensure_modifiable()
        self.input_sandbox = [str(f) for f in files]

    def set_output_sandbox(self, patterns):
        self.ensure_modifiable()
        self.output_sandbox = [str(p) for p in patterns]

    def set_component(self, slot: str, instance: Optional[ComponentInstance]):
        self.ensure_modifiable()
        if slot in ("application", "backend") and instance is None:
            raise JobNotModifiable(f"{slot} is mandatory")
        setattr(self, slot, instance)
        if instance is not None:
            instance.owner = self

    def all_jobs(self):
        """This job followed by its subjobs."""
        yield self
        yield from self.subjobs


def new_job(
    registry: PluginRegistry,
    repository,
    application,
    backend,
    *,
    name: str = "",
    inputdata=None,
    outputdata=None,
    splitter=None,
    merger=None,
    input_sandbox=None,
    output_sandbox=None,
) -> Job:
    """Create a job in status new with a fresh id and persist it immediately.

    ``application``/``backend`` (and the optional component arguments) may be
    ComponentInstances or plain {type: ...} documents; either way the plugin
    types must be registered.
    """
    app = registry.create(Category.APPLICATION, application)
    bak = registry.create(Category.BACKEND, backend)
    job = Job(
        id=repository.allocate_job_id(),
        application=app,
        backend=bak,
        name=name,
        inputdata=registry.create(Category.DATASET, inputdata) if inputdata else None,
        outputdata=registry.create(Category.DATASET, outputdata) if outputdata else None,
        splitter=registry.create(Category.SPLITTER, splitter) if splitter else None,
        merger=registry.create(Category.MERGER, merger) if merger else None,
        input_sandbox=[str(f) for f in (input_sandbox or [])],
        output_sandbox=[str(p) for p in (output_sandbox or [])],
    )
    repository.save(job)
    return job


def copy_job(registry: PluginRegistry, repository, source: Job, **overrides) -> Job:
    """Deep copy with fresh id, status new, cleared handle/subjobs/timestamps."""
    job = Job(
        id=repository.allocate_job_id(),
        application=source.application.copy(),
        backend=source.backend.copy(),
        name=overrides.pop("name", source.name),
        inputdata=source.inputdata.copy() if source.inputdata else None,
        outputdata=source.outputdata.copy() if source.outputdata else None,
        splitter=source.splitter.copy() if source.splitter else None,
        merger=source.merger.copy() if source.merger else None,
        input_sandbox=list(source.input_sandbox),
        output_sandbox=list(source.output_sandbox),
    )
    slot_categories = {
        "application": Category.APPLICATION,
        "backend": Category.BACKEND,
        "inputdata": Category.DATASET,
        "outputdata": Category.DATASET,
        "splitter": Category.SPLITTER,
        "merger": Category.MERGER,
    }
    for slot, category in slot_categories.items():
        if slot in overrides:
            value = overrides.pop(slot)
            instance = registry.create(category, value) if value is not None else None
            job.set_component(slot, instance)
    if "input_sandbox" in overrides:
        job.set_input_sandbox(overrides.pop("input_sandbox"))
    if "output_sandbox" in overrides:
        job.set_output_sandbox(overrides.pop("output_sandbox"))
    if overrides:
        raise ConfigError(f"unknown job fields in copy: {sorted(overrides)}")
    repository.save(job)
    return job


def transition(job: Job, event, *, repository=None, emit=None) -> JobStatus:
    """Apply a lifecycle event to a job, persisting and emitting if wired.

    Raises IllegalTransition when the event is not legal from the current
    status; the job is left untouched in that case.
    """
    event = TransitionEvent(event)
    key = (job.status, event)
    if key not in TRANSITION_TABLE:
        raise IllegalTransition(job.status.value, event.value)
    old = job.status
    job.status = TRANSITION_TABLE[key]
    now = utcnow()
    if job.status is JobStatus.SUBMITTED:
        job.submitted_at = now
        job.finished_at = None
    elif job.status.is_terminal():
        job.finished_at = now
    if repository is not None:
        repository.save(job)
    if emit is not None:
        emit(job, old, event)
    return job.status


def derive_master_status(subjob_statuses) -> JobStatus:
    """Aggregate subjob statuses: activity beats failed beats killed beats completed."""
    statuses = list(subjob_statuses)
    if not statuses:
        raise EmptySubjobs("cannot derive a master status from no subjobs")
    statuses = [JobStatus(s) for s in statuses]
    if any(s in (JobStatus.SUBMITTED, JobStatus.RUNNING) for s in statuses):
        return JobStatus.RUNNING
    if any(s is JobStatus.FAILED for s in statuses):
        return JobStatus.FAILED
    if any(s is JobStatus.KILLED for s in statuses):
        return JobStatus.KILLED
    return JobStatus.COMPLETED


@dataclass
class JobTemplate:
    """A reusable job configuration; instantiating never aliases the payload."""

    template_id: int
    name: str
    payload: Job

    def instantiate_payload(self) -> Job:
        payload = copy.deepcopy(self.payload)
        payload.status = JobStatus.NEW
        payload.backend_handle = None
        payload.subjobs = []
        return payload
