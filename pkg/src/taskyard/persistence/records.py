"""Versioned job records: serialization, deserialization and schema migration.

A record is a JSON document with a stable layout::

    {
      "format": 1,
      "job_id": 7,
      "schema_versions": {"Executable": 2, "Local": 1},
      "metadata": {"name": ..., "application_type": ..., "backend_type": ...,
                   "status": ..., "created_at": ..., "submitted_at": ...,
                   "finished_at": ...},
      "payload": { ...all schema attributes, internal included... }
    }

Component documents inside the payload are flat maps with a reserved
``type`` key; attributes removed by a schema upgrade are preserved under
``__quarantine__`` for audit.  Records are plain text so migration fixtures
can be written by hand.
"""

from __future__ import annotations

import copy
import json
from datetime import datetime
from typing import Optional

from ..core import BackendHandle, Job, JobStatus
from ..errors import MigrationGap, StorageError
from ..plugins import Category, ComponentInstance, PluginRegistry, coerce_value

RECORD_FORMAT = 1

_SLOT_CATEGORIES = {
    "application": Category.APPLICATION,
    "backend": Category.BACKEND,
    "inputdata": Category.DATASET,
    "outputdata": Category.DATASET,
    "splitter": Category.SPLITTER,
    "merger": Category.MERGER,
}


def _ts(value: Optional[datetime]) -> Optional[str]:
    return value.isoformat() if value is not None else None


def _parse_ts(value) -> Optional[datetime]:
    return datetime.fromisoformat(value) if value else None


def _component_doc(comp: Optional[ComponentInstance]) -> Optional[dict]:
    return comp.to_document(include_internal=True) if comp is not None else None


def _job_payload(job: Job) -> dict:
    doc = {
        "name": job.name,
        "status": job.status.value,
        "subjob_index": job.subjob_index,
        "application": _component_doc(job.application),
        "backend": _component_doc(job.backend),
        "inputdata": _component_doc(job.inputdata),
        "outputdata": _component_doc(job.outputdata),
        "splitter": _component_doc(job.splitter),
        "merger": _component_doc(job.merger),
        "input_sandbox": list(job.input_sandbox),
        "output_sandbox": list(job.output_sandbox),
        "backend_handle": job.backend_handle.to_document() if job.backend_handle else None,
        "created_at": _ts(job.created_at),
        "submitted_at": _ts(job.submitted_at),
        "finished_at": _ts(job.finished_at),
    }
    if job.subjob_index is None:
        doc["subjobs"] = [_job_payload(sub) for sub in job.subjobs]
    return doc


def _collect_schema_versions(job: Job) -> dict:
    versions = {}
    for j in job.all_jobs():
        for comp in j.components():
            versions[comp.type_name] = comp.schema.version
    return versions


def record_document(job: Job, registry: PluginRegistry = None) -> dict:
    """Serialize a master job (subjobs embedded) into its record document."""
    return {
        "format": RECORD_FORMAT,
        "job_id": job.id,
        "schema_versions": _collect_schema_versions(job),
        "metadata": {
            "name": job.name,
            "application_type": job.application.type_name,
            "backend_type": job.backend.type_name,
            "status": job.status.value,
            "created_at": _ts(job.created_at),
            "submitted_at": _ts(job.submitted_at),
            "finished_at": _ts(job.finished_at),
        },
        "payload": _job_payload(job),
    }


def record_bytes(document: dict) -> bytes:
    return (json.dumps(document, indent=2, sort_keys=True) + "\n").encode("utf-8")


# -- migration ---------------------------------------------------------------

def _migrate_component_doc(doc: dict, stored_version: int, registry: PluginRegistry,
                           category: Category) -> dict:
    name = doc["type"]
    plug = registry.lookup(category, name)
    schema = plug.schema
    attrs = {k: copy.deepcopy(v) for k, v in doc.items()
             if k not in ("type", "__quarantine__")}
    quarantine = dict(doc.get("__quarantine__", {}))

    if stored_version > schema.version:
        raise MigrationGap(
            f"record for {name} stored at v{stored_version} but registry "
            f"only knows v{schema.version}"
        )
    version = stored_version
    while version < schema.version:
        hook = plug.migrations.get(version)
        if hook is None:
            raise MigrationGap(
                f"no migration hook for {name} v{version} -> v{version + 1}"
            )
        attrs = hook(dict(attrs))
        version += 1

    upgraded = {"type": name}
    for attr in schema.attributes:
        if attr.name in attrs:
            upgraded[attr.name] = coerce_value(attr.value_type, attrs.pop(attr.name),
                                               shortcut=attr.shortcut)
        else:
            upgraded[attr.name] = copy.deepcopy(attr.default)
    # anything the current schema no longer declares is kept for audit
    quarantine.update(attrs)
    if quarantine:
        upgraded["__quarantine__"] = quarantine
    return upgraded


def _walk_components(payload: dict):
    """Yield (holder, slot, category) for every component doc in a record payload."""
    for slot, category in _SLOT_CATEGORIES.items():
        if payload.get(slot) is not None:
            yield payload, slot, category
    for sub in payload.get("subjobs", []):
        for slot, category in _SLOT_CATEGORIES.items():
            if sub.get(slot) is not None:
                yield sub, slot, category


def migrate_record(document: dict, registry: PluginRegistry) -> dict:
    """Upgrade a record document to the registry's current schema versions.

    Returns a new document; raises MigrationGap when a step has no hook
    (callers then load the record read-only).
    """
    document = copy.deepcopy(document)
    stored_versions = document.get("schema_versions", {})
    payload = document["payload"]
    for holder, slot, category in _walk_components(payload):
        doc = holder[slot]
        name = doc["type"]
        stored = stored_versions.get(name, 1)
        holder[slot] = _migrate_component_doc(doc, stored, registry, category)
    new_versions = {}
    for holder, slot, category in _walk_components(payload):
        name = holder[slot]["type"]
        new_versions[name] = registry.lookup(category, name).schema.version
    document["schema_versions"] = new_versions
    return document


# -- deserialization -----------------------------------------------------------

def _component_from_doc(doc: Optional[dict], registry: PluginRegistry,
                        category: Category) -> Optional[ComponentInstance]:
    if doc is None:
        return None
    schema = registry.schema_of(category, doc["type"])
    values = {k: v for k, v in doc.items() if k not in ("type", "__quarantine__")}
    known = {k: v for k, v in values.items() if schema.has_attribute(k)}
    instance = ComponentInstance(schema, known)
    quarantine = dict(doc.get("__quarantine__", {}))
    quarantine.update({k: v for k, v in values.items() if not schema.has_attribute(k)})
    instance.quarantine = quarantine
    return instance


def _job_from_payload(payload: dict, registry: PluginRegistry, job_id: int,
                      read_only: bool) -> Job:
    job = Job(
        id=job_id,
        application=_component_from_doc(payload["application"], registry, Category.APPLICATION),
        backend=_component_from_doc(payload["backend"], registry, Category.BACKEND),
        name=payload.get("name", ""),
        inputdata=_component_from_doc(payload.get("inputdata"), registry, Category.DATASET),
        outputdata=_component_from_doc(payload.get("outputdata"), registry, Category.DATASET),
        splitter=_component_from_doc(payload.get("splitter"), registry, Category.SPLITTER),
        merger=_component_from_doc(payload.get("merger"), registry, Category.MERGER),
        input_sandbox=list(payload.get("input_sandbox", [])),
        output_sandbox=list(payload.get("output_sandbox", [])),
        status=JobStatus(payload.get("status", "new")),
        backend_handle=BackendHandle.from_document(payload.get("backend_handle")),
        subjob_index=payload.get("subjob_index"),
        created_at=_parse_ts(payload.get("created_at")),
        submitted_at=_parse_ts(payload.get("submitted_at")),
        finished_at=_parse_ts(payload.get("finished_at")),
        read_only=read_only,
    )
    job.subjobs = [
        _job_from_payload(sub, registry, job_id, read_only)
        for sub in payload.get("subjobs", [])
    ]
    return job


def job_from_record(document: dict, registry: PluginRegistry) -> Job:
    """Reconstruct a Job from a record, migrating first when versions differ.

    A record that cannot be migrated (MigrationGap) is still loaded, but
    flagged read-only so no mutation or submission can touch it.
    """
    if document.get("format") != RECORD_FORMAT:
        raise StorageError(
            f"unsupported record format {document.get('format')!r}"
        )
    read_only = False
    try:
        document = migrate_record(document, registry)
    except MigrationGap:
        read_only = True
    return _job_from_payload(document["payload"], registry, document["job_id"], read_only)
