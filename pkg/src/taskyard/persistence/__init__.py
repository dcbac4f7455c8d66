from .records import migrate_record, record_document
from .repository import JobRepository, JobSelection
from .workspace import Workspace

__all__ = [
    "JobRepository",
    "JobSelection",
    "Workspace",
    "migrate_record",
    "record_document",
]
