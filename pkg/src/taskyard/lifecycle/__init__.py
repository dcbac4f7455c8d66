from .credentials import CredentialState, MockCredential
from .events import EventBus, EventKind, FileSink, MonitorEvent, StreamLog
from .monitor import MonitorConfig, MonitorService

__all__ = [
    "CredentialState",
    "MockCredential",
    "EventBus",
    "EventKind",
    "FileSink",
    "MonitorEvent",
    "StreamLog",
    "MonitorConfig",
    "MonitorService",
]
