from .base import (
    BackendJobDescription,
    ExecutionBackend,
    FetchResult,
    PollItem,
    StatusReport,
)
from .batchsim import BATCHSIM_SCHEMA, BatchSimBackend, BatchSimConfig, QueueConfig
from .local import LOCAL_SCHEMA, LocalBackend
from .mockgrid import MOCKGRID_SCHEMA, LatencySpec, MockGridBackend, MockGridConfig
from .remoteshell import REMOTESHELL_SCHEMA, RemoteShellBackend, RemoteShellConfig
from .wrapper import SensorConfig, generate_wrapper, parse_spool_line

__all__ = [
    "BackendJobDescription",
    "ExecutionBackend",
    "FetchResult",
    "PollItem",
    "StatusReport",
    "BatchSimBackend",
    "BatchSimConfig",
    "QueueConfig",
    "LocalBackend",
    "MockGridBackend",
    "MockGridConfig",
    "LatencySpec",
    "RemoteShellBackend",
    "RemoteShellConfig",
    "SensorConfig",
    "generate_wrapper",
    "parse_spool_line",
    "BATCHSIM_SCHEMA",
    "LOCAL_SCHEMA",
    "MOCKGRID_SCHEMA",
    "REMOTESHELL_SCHEMA",
]
