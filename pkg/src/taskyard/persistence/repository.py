"""Job repository: versioned records on disk, a metadata index, templates
and the jobtree.

Layout under the repository root::

    <root>/.session.lock      owner pid; prevents two daemons sharing a root
    <root>/meta.json          id counters
    <root>/index.jsonl        append-only metadata journal (last entry wins)
    <root>/jobs/<id>/record.json
    <root>/templates/<id>.json
    <root>/jobtree.json

All writes are atomic (write to temp file in the same directory, rename).
Single-writer, multi-reader: the owning session serializes mutations.
"""

from __future__ import annotations

import fnmatch
import hashlib
import json
import logging
import os
import shutil
import threading
from pathlib import Path
from typing import Optional

from ..core import Job, JobStatus, JobTemplate
from ..errors import (
    InvalidFilter,
    NotEmpty,
    PathExists,
    PathMissing,
    SessionLocked,
    StorageError,
    UnknownJob,
    UnknownTemplate,
)
from ..plugins import PluginRegistry
from .records import job_from_record, record_bytes, record_document
from .workspace import Workspace

logger = logging.getLogger(__name__)

LOCK_FILENAME = ".session.lock"

_FILTER_KEYS = {"status", "name", "application_type", "backend_type", "id_range"}


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def _index_entry(job: Job) -> dict:
    return {
        "job_id": job.id,
        "name": job.name,
        "application_type": job.application.type_name,
        "backend_type": job.backend.type_name,
        "status": job.status.value,
        "created_at": job.created_at.isoformat() if job.created_at else None,
    }


class JobTree:
    """Hierarchical labelling of jobs; a job id may appear under many paths."""

    def __init__(self, path: Path):
        self.path = path
        self.root = {"children": {}, "job_ids": []}
        if path.exists():
            self.root = json.loads(path.read_text())

    def _flush(self):
        _atomic_write(self.path, (json.dumps(self.root, indent=2) + "\n").encode())

    @staticmethod
    def _parts(path: str) -> list[str]:
        parts = [p for p in str(path).split("/") if p]
        return parts

    def _node(self, path: str, *, create=False) -> dict:
        node = self.root
        for part in self._parts(path):
            children = node["children"]
            if part not in children:
                if not create:
                    raise PathMissing(f"jobtree path not found: {path}")
                children[part] = {"children": {}, "job_ids": []}
            node = children[part]
        return node

    def mkdir(self, path: str):
        parts = self._parts(path)
        if not parts:
            raise PathExists("jobtree root already exists")
        parent = self._node("/".join(parts[:-1]))
        if parts[-1] in parent["children"]:
            raise PathExists(f"jobtree path already exists: {path}")
        parent["children"][parts[-1]] = {"children": {}, "job_ids": []}
        self._flush()

    def add(self, path: str, job_id: int):
        node = self._node(path)
        if job_id not in node["job_ids"]:
            node["job_ids"].append(job_id)
            self._flush()

    def list(self, path: str = "/") -> dict:
        node = self._node(path)
        return {
            "path": "/" + "/".join(self._parts(path)),
            "children": sorted(node["children"]),
            "job_ids": list(node["job_ids"]),
        }

    def rm(self, path: str, recursive: bool = False):
        parts = self._parts(path)
        if not parts:
            raise PathMissing("cannot remove the jobtree root")
        parent = self._node("/".join(parts[:-1]))
        node = parent["children"].get(parts[-1])
        if node is None:
            raise PathMissing(f"jobtree path not found: {path}")
        if (node["children"] or node["job_ids"]) and not recursive:
            raise NotEmpty(f"jobtree path not empty: {path}")
        del parent["children"][parts[-1]]
        self._flush()

    def remove_job_refs(self, job_id: int):
        changed = []

        def scrub(node):
            if job_id in node["job_ids"]:
                node["job_ids"].remove(job_id)
                changed.append(True)
            for child in node["children"].values():
                scrub(child)

        scrub(self.root)
        if changed:
            self._flush()


class JobSelection:
    """An ordered set of jobs with bulk verbs applied through a session.

    Verbs skip jobs for which the transition is illegal and report the
    per-job outcome instead of failing the whole selection.
    """

    def __init__(self, jobs: list[Job], session=None):
        self.jobs = jobs
        self._session = session

    def __iter__(self):
        return iter(self.jobs)

    def __len__(self):
        return len(self.jobs)

    def ids(self) -> list[int]:
        return [j.id for j in self.jobs]

    def _apply(self, verb: str) -> list[dict]:
        if self._session is None:
            raise StorageError("selection is not attached to a session")
        outcomes = []
        for job in self.jobs:
            outcome = {"id": job.id, "verb": verb}
            try:
                getattr(self._session, verb)(job.id)
                outcome["ok"] = True
                outcome["status"] = job.status.value
            except Exception as exc:  # per-job outcome, never abort the batch
                outcome["ok"] = False
                outcome["error"] = getattr(exc, "code", type(exc).__name__)
                outcome["message"] = str(exc)
            outcomes.append(outcome)
        return outcomes

    def submit(self):
        return self._apply("submit")

    def kill(self):
        return self._apply("kill")

    def resubmit(self):
        return self._apply("resubmit")

    def remove(self):
        return self._apply("remove")


class JobRepository:
    """Persistent store of job records with an in-memory metadata index."""

    def __init__(self, root, registry: PluginRegistry, workspace: Optional[Workspace] = None,
                 acquire_lock: bool = True):
        self.root = Path(root)
        self.registry = registry
        self.workspace = workspace
        self._lock = threading.RLock()
        self._jobs: dict[int, Job] = {}
        self._index: dict[int, dict] = {}
        self._digests: dict[int, str] = {}
        self._templates: dict[int, JobTemplate] = {}
        self._locked = False

        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "jobs").mkdir(exist_ok=True)
        (self.root / "templates").mkdir(exist_ok=True)
        if acquire_lock:
            self._acquire_lock()
        self._meta = self._load_meta()
        self.jobtree = JobTree(self.root / "jobtree.json")
        self._load_all()

    # -- session lock -------------------------------------------------------

    def _acquire_lock(self):
        lock = self.root / LOCK_FILENAME
        if lock.exists():
            try:
                pid = int(lock.read_text().strip())
            except ValueError:
                pid = -1
            if pid > 0 and _pid_alive(pid):
                raise SessionLocked(
                    f"repository {self.root} is in use by pid {pid}"
                )
            logger.warning("removing stale session lock (pid %s)", pid)
            lock.unlink()
        lock.write_text(f"{os.getpid()}\n")
        self._locked = True

    def close(self):
        with self._lock:
            self._compact_index()
            if self._locked:
                lock = self.root / LOCK_FILENAME
                if lock.exists():
                    lock.unlink()
                self._locked = False

    # -- meta / id allocation -------------------------------------------------

    def _load_meta(self) -> dict:
        meta_path = self.root / "meta.json"
        if meta_path.exists():
            return json.loads(meta_path.read_text())
        return {"next_job_id": 0, "next_template_id": 0}

    def _save_meta(self):
        _atomic_write(self.root / "meta.json",
                      (json.dumps(self._meta) + "\n").encode())

    def allocate_job_id(self) -> int:
        with self._lock:
            job_id = self._meta["next_job_id"]
            self._meta["next_job_id"] = job_id + 1
            self._save_meta()
            return job_id

    def _allocate_template_id(self) -> int:
        with self._lock:
            tid = self._meta["next_template_id"]
            self._meta["next_template_id"] = tid + 1
            self._save_meta()
            return tid

    # -- startup load -----------------------------------------------------------

    def _record_path(self, job_id: int) -> Path:
        return self.root / "jobs" / str(job_id) / "record.json"

    def _load_all(self):
        index_path = self.root / "index.jsonl"
        if index_path.exists():
            for line in index_path.read_text().splitlines():
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError:
                    continue  # torn tail write from a crash
                self._index[entry["job_id"]] = entry
        else:
            self._rebuild_index()
        for job_id in sorted(self._index):
            if job_id not in self._jobs:
                try:
                    self._load_from_disk(job_id)
                except UnknownJob:
                    self._index.pop(job_id, None)

    def _rebuild_index(self):
        logger.info("index missing; rebuilding from job records")
        for entry in sorted(
            (p for p in (self.root / "jobs").iterdir() if p.is_dir()),
            key=lambda p: int(p.name) if p.name.isdigit() else -1,
        ):
            if not entry.name.isdigit():
                continue
            job = self._load_from_disk(int(entry.name))
            self._index[job.id] = _index_entry(job)
        self._compact_index()

    def _load_from_disk(self, job_id: int) -> Job:
        path = self._record_path(job_id)
        if not path.exists():
            raise UnknownJob(f"no record for job {job_id}")
        try:
            document = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise StorageError(f"record for job {job_id} is corrupt: {exc}")
        job = job_from_record(document, self.registry)
        self._jobs[job_id] = job
        self._index[job_id] = _index_entry(job)
        return job

    def _compact_index(self):
        lines = [json.dumps(self._index[k]) for k in sorted(self._index)]
        _atomic_write(self.root / "index.jsonl",
                      ("\n".join(lines) + ("\n" if lines else "")).encode())

    # -- core CRUD ------------------------------------------------------------

    def save(self, job: Job):
        """Write the job's record atomically; no-op when nothing changed."""
        with self._lock:
            document = record_document(job, self.registry)
            data = record_bytes(document)
            digest = hashlib.sha256(data).hexdigest()
            if self._digests.get(job.id) == digest:
                self._jobs[job.id] = job
                return
            record_dir = self._record_path(job.id).parent
            record_dir.mkdir(parents=True, exist_ok=True)
            _atomic_write(self._record_path(job.id), data)
            self._digests[job.id] = digest
            self._jobs[job.id] = job
            self._index[job.id] = _index_entry(job)
            with open(self.root / "index.jsonl", "a") as fh:
                fh.write(json.dumps(self._index[job.id]) + "\n")
            if self.workspace is not None:
                self.workspace.allocate(job)

    def load(self, job_id: int) -> Job:
        with self._lock:
            if job_id in self._jobs:
                return self._jobs[job_id]
            return self._load_from_disk(job_id)

    def exists(self, job_id: int) -> bool:
        return job_id in self._jobs or self._record_path(job_id).exists()

    def remove(self, job_id: int):
        """Delete the record, index entries, jobtree references and workspace."""
        with self._lock:
            if not self.exists(job_id):
                raise UnknownJob(f"no record for job {job_id}")
            record_dir = self._record_path(job_id).parent
            if record_dir.exists():
                shutil.rmtree(record_dir)
            self._jobs.pop(job_id, None)
            self._index.pop(job_id, None)
            self._digests.pop(job_id, None)
            self.jobtree.remove_job_refs(job_id)
            self._compact_index()
            if self.workspace is not None:
                self.workspace.remove(job_id)

    def all_jobs(self) -> list[Job]:
        with self._lock:
            return [self._jobs[k] for k in sorted(self._jobs)]

    def __len__(self):
        return len(self._jobs)

    # -- metadata selection ------------------------------------------------------

    def select(self, session=None, **filters) -> JobSelection:
        """Select jobs by metadata; all given predicates must hold.

        Supported filters: status, name (exact or glob), application_type,
        backend_type, id_range=(lo, hi) inclusive.
        """
        unknown = set(filters) - _FILTER_KEYS
        if unknown:
            raise InvalidFilter(f"unknown filter keys: {sorted(unknown)}")
        status = filters.get("status")
        if status is not None:
            try:
                status = JobStatus(status)
            except ValueError:
                raise InvalidFilter(f"unknown status {status!r}")
        id_range = filters.get("id_range")
        if id_range is not None:
            try:
                lo, hi = id_range
            except (TypeError, ValueError):
                raise InvalidFilter("id_range must be a (lo, hi) pair")

        def matches(entry: dict) -> bool:
            if status is not None and entry["status"] != status.value:
                return False
            name = filters.get("name")
            if name is not None and not fnmatch.fnmatchcase(entry["name"], name):
                return False
            for key in ("application_type", "backend_type"):
                if filters.get(key) is not None and entry[key] != filters[key]:
                    return False
            if id_range is not None and not (lo <= entry["job_id"] <= hi):
                return False
            return True

        with self._lock:
            ids = [jid for jid in sorted(self._index) if matches(self._index[jid])]
            jobs = [self.load(jid) for jid in ids]
        return JobSelection(jobs, session)

    # -- templates ------------------------------------------------------------

    def _template_path(self, template_id: int) -> Path:
        return self.root / "templates" / f"{template_id}.json"

    def save_template(self, job: Job, name: str = "") -> JobTemplate:
        """Store a job's configuration as a reusable template."""
        with self._lock:
            payload = Job(
                id=-1,
                application=job.application.copy(),
                backend=job.backend.copy(),
                name=name or job.name,
                inputdata=job.inputdata.copy() if job.inputdata else None,
                outputdata=job.outputdata.copy() if job.outputdata else None,
                splitter=job.splitter.copy() if job.splitter else None,
                merger=job.merger.copy() if job.merger else None,
                input_sandbox=list(job.input_sandbox),
                output_sandbox=list(job.output_sandbox),
            )
            template = JobTemplate(
                template_id=self._allocate_template_id(),
                name=name or job.name,
                payload=payload,
            )
            document = record_document(payload, self.registry)
            document["template_id"] = template.template_id
            document["template_name"] = template.name
            _atomic_write(self._template_path(template.template_id),
                          record_bytes(document))
            self._templates[template.template_id] = template
            return template

    def load_template(self, template_id: int) -> JobTemplate:
        with self._lock:
            if template_id in self._templates:
                return self._templates[template_id]
            path = self._template_path(template_id)
            if not path.exists():
                raise UnknownTemplate(f"no template {template_id}")
            document = json.loads(path.read_text())
            payload = job_from_record(document, self.registry)
            template = JobTemplate(
                template_id=document["template_id"],
                name=document.get("template_name", ""),
                payload=payload,
            )
            self._templates[template_id] = template
            return template

    def list_templates(self) -> list[JobTemplate]:
        with self._lock:
            ids = {int(p.stem) for p in (self.root / "templates").glob("*.json")}
            return [self.load_template(tid) for tid in sorted(ids)]

    def instantiate_template(self, template_id: int, **overrides) -> Job:
        """Create a fresh job from a template payload (copy semantics)."""
        from ..core import copy_job

        template = self.load_template(template_id)
        return copy_job(self.registry, self, template.instantiate_payload(), **overrides)
