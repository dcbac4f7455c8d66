"""The JSON contract: canonical serialization plus the operation layer
shared by the HTTP endpoints and the CLI's embedded mode, so both transports
produce byte-identical documents.
"""

from __future__ import annotations

import json
from typing import Optional

from ..core import Job, JobStatus
from ..errors import InvalidFilter
from ..plugins import Category

CATEGORY_PLURALS = {
    Category.APPLICATION: "applications",
    Category.BACKEND: "backends",
    Category.DATASET: "datasets",
    Category.SPLITTER: "splitters",
    Category.MERGER: "mergers",
}


def canon_json(payload) -> str:
    """The one JSON serialization both HTTP and CLI emit."""
    return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _ts(value) -> Optional[str]:
    return value.isoformat() if value is not None else None


def component_document(comp) -> Optional[dict]:
    return comp.to_document(include_internal=False) if comp is not None else None


def handle_document(handle) -> Optional[dict]:
    return handle.to_document() if handle is not None else None


def job_document(job: Job, *, with_subjobs: bool = True) -> dict:
    doc = {
        "id": job.id,
        "fqid": job.fqid,
        "subjob_index": job.subjob_index,
        "name": job.name,
        "status": job.status.value,
        "application": component_document(job.application),
        "backend": component_document(job.backend),
        "inputdata": component_document(job.inputdata),
        "outputdata": component_document(job.outputdata),
        "splitter": component_document(job.splitter),
        "merger": component_document(job.merger),
        "input_sandbox": list(job.input_sandbox),
        "output_sandbox": list(job.output_sandbox),
        "backend_handle": handle_document(job.backend_handle),
        "created_at": _ts(job.created_at),
        "submitted_at": _ts(job.submitted_at),
        "finished_at": _ts(job.finished_at),
        "read_only": job.read_only,
    }
    if with_subjobs and job.subjob_index is None:
        doc["subjobs"] = [job_document(s, with_subjobs=False) for s in job.subjobs]
    return doc


def job_row(job: Job) -> dict:
    """Compact row for listings and the dashboard table."""
    handle = job.backend_handle
    done = sum(1 for s in job.subjobs if s.status is JobStatus.COMPLETED)
    return {
        "id": job.id,
        "fqid": job.fqid,
        "name": job.name,
        "application_type": job.application.type_name,
        "backend_type": job.backend.type_name,
        "status": job.status.value,
        "actual_queue": handle.actual_queue if handle else None,
        "actual_host": handle.actual_host if handle else None,
        "submitted_at": _ts(job.submitted_at),
        "finished_at": _ts(job.finished_at),
        "subjobs": {"total": len(job.subjobs), "completed": done},
    }


def schema_document(schema) -> dict:
    return {
        "name": schema.plugin_name,
        "category": schema.category.value,
        "version": schema.version,
        "doc": schema.doc,
        "attributes": [
            {
                "name": attr.name,
                "value_type": attr.value_type.value,
                "access": attr.access.value,
                "default": attr.default,
                "doc": attr.doc,
            }
            for attr in schema.attributes
            if attr.visible
        ],
    }


def schemas_document(registry) -> dict:
    doc = {plural: [] for plural in CATEGORY_PLURALS.values()}
    for schema in registry.list_plugins():
        doc[CATEGORY_PLURALS[schema.category]].append(schema_document(schema))
    return doc


def template_document(template) -> dict:
    return {
        "template_id": template.template_id,
        "name": template.name,
        "payload": job_document(template.payload, with_subjobs=False),
    }


def error_document(exc) -> dict:
    return {
        "code": getattr(exc, "code", type(exc).__name__),
        "message": getattr(exc, "message", str(exc)),
        "detail": getattr(exc, "detail", {}),
    }


# --------------------------------------------------------------------------
# Operations (shared verb layer)
# --------------------------------------------------------------------------

_SELECT_PARAM_KEYS = {
    "status": "status",
    "name": "name",
    "application": "application_type",
    "backend": "backend_type",
}


def select_filters(params: dict) -> dict:
    filters = {}
    for key, value in params.items():
        if value in (None, ""):
            continue
        if key not in _SELECT_PARAM_KEYS:
            raise InvalidFilter(f"unknown filter {key!r}")
        filters[_SELECT_PARAM_KEYS[key]] = value
    return filters


class Operations:
    """Every verb the interface exposes, returning plain JSON-able payloads."""

    def __init__(self, session):
        self.session = session

    # jobs ---------------------------------------------------------------

    def list_jobs(self, params: dict) -> list:
        selection = self.session.select(**select_filters(params))
        return [job_row(job) for job in selection]

    def create_job(self, body: dict) -> dict:
        job = self.session.create_job(document=body)
        return job_document(job)

    def get_job(self, fqid) -> dict:
        return job_document(self.session.get_job_fq(fqid))

    def submit_job(self, job_id: int) -> dict:
        return job_document(self.session.submit(int(job_id)))

    def kill_job(self, job_id: int) -> dict:
        return job_document(self.session.kill(int(job_id)))

    def resubmit_job(self, job_id: int) -> dict:
        return job_document(self.session.resubmit(int(job_id)))

    def copy_job(self, job_id: int, body: Optional[dict]) -> dict:
        overrides = dict(body or {})
        return job_document(self.session.copy(int(job_id), **overrides))

    def remove_job(self, job_id: int) -> dict:
        self.session.remove(int(job_id))
        return {"removed": int(job_id)}

    def peek_job(self, fqid, filename: str, lines: Optional[int]) -> dict:
        text = self.session.peek(fqid, filename or "stdout", lines)
        return {"job": str(fqid), "file": filename or "stdout", "text": text}

    def subjobs(self, job_id: int) -> list:
        master = self.session.get_job(int(job_id))
        return [job_document(s, with_subjobs=False) for s in master.subjobs]

    def merge_job(self, job_id: int, body: Optional[dict]) -> dict:
        permissive = bool((body or {}).get("permissive", False)) or None
        produced = self.session.merge(int(job_id), permissive=permissive)
        return {"job": int(job_id), "merged": produced}

    def bulk_verb(self, verb: str, params: dict) -> list:
        selection = self.session.select(**select_filters(params))
        return getattr(selection, verb)()

    # schemas / templates / tree ------------------------------------------

    def schemas(self) -> dict:
        return schemas_document(self.session.registry)

    def list_templates(self) -> list:
        return [template_document(t) for t in self.session.list_templates()]

    def save_template(self, body: dict) -> dict:
        job_id = body.get("job_id")
        if job_id is None:
            raise InvalidFilter("template creation needs job_id")
        template = self.session.save_template(int(job_id), body.get("name", ""))
        return template_document(template)

    def instantiate_template(self, template_id: int, body: Optional[dict]) -> dict:
        overrides = dict(body or {})
        job = self.session.instantiate_template(int(template_id), **overrides)
        return job_document(job)

    def jobtree_get(self, path: str) -> dict:
        return self.session.repository.jobtree.list(path or "/")

    def jobtree_post(self, body: dict) -> dict:
        op = body.get("op")
        path = body.get("path", "/")
        tree = self.session.repository.jobtree
        if op == "mkdir":
            tree.mkdir(path)
        elif op == "add":
            tree.add(path, int(body["job_id"]))
        elif op == "rm":
            tree.rm(path, recursive=bool(body.get("recursive", False)))
            return tree.list("/")
        else:
            raise InvalidFilter(f"unknown jobtree op {op!r}")
        return tree.list(path)

    # credential ----------------------------------------------------------------

    def credential(self) -> dict:
        return self.session.credential_status()

    def credential_renew(self, body: Optional[dict]) -> dict:
        extra = (body or {}).get("extra_ttl_s")
        return self.session.credential_renew(extra)

    def credential_destroy(self) -> dict:
        return self.session.credential_destroy()

    # robot ---------------------------------------------------------------------

    def robot_runs(self) -> list:
        return self.session.robot.list_runs()

    def robot_run(self, body: dict, wait: bool = False) -> dict:
        from ..robot import RobotPipeline

        pipeline = RobotPipeline.from_document(body or {})
        if wait:
            return self.session.robot.run_pipeline(pipeline)
        run_id = self.session.robot.start_run(pipeline)
        return {"run_id": run_id, "status": "running"}
