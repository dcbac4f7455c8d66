"""taskyard: define a computational job once as typed components, run it on
interchangeable backends, and let the daemon do the bookkeeping."""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    BackendHandle,
    Job,
    JobStatus,
    JobTemplate,
    TransitionEvent,
    copy_job,
    derive_master_status,
    new_job,
    transition,
)
from .plugins import (  # noqa: F401
    Access,
    AttributeDescriptor,
    Category,
    ComponentInstance,
    PluginRegistry,
    PluginSchema,
    ValueType,
    proxy_view,
)
from .session import Session  # noqa: F401
