"""Assembly of the built-in plugin set.

Plugins are compiled-in registrations; the config file picks which of them
a session enables.  The registry indirection is what keeps the rest of the
system free of per-plugin knowledge.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from .backends import (
    BATCHSIM_SCHEMA,
    LOCAL_SCHEMA,
    MOCKGRID_SCHEMA,
    REMOTESHELL_SCHEMA,
    BatchSimBackend,
    BatchSimConfig,
    LocalBackend,
    MockGridBackend,
    MockGridConfig,
    RemoteShellBackend,
    RemoteShellConfig,
)
from .plugins import (
    EXECUTABLE_MIGRATIONS,
    EXECUTABLE_SCHEMA,
    FILE_LIST_DATASET_SCHEMA,
    NULL_DATASET_SCHEMA,
    Category,
    ExecutableBehavior,
    PluginRegistry,
    register_executable_handlers,
)
from .tasks import (
    ARG_SPLITTER_SCHEMA,
    FILE_DATASET_SPLITTER_SCHEMA,
    TABLE_SUM_MERGER_SCHEMA,
    TEXT_MERGER_SCHEMA,
    ArgSplitterBehavior,
    FileDatasetSplitterBehavior,
    TableSumMergerBehavior,
    TextMergerBehavior,
)

BUILTIN_BACKEND_SCHEMAS = {
    "Local": LOCAL_SCHEMA,
    "BatchSim": BATCHSIM_SCHEMA,
    "RemoteShell": REMOTESHELL_SCHEMA,
    "MockGrid": MOCKGRID_SCHEMA,
}

BUILTIN_PLUGINS = {
    "application": ["Executable"],
    "backend": list(BUILTIN_BACKEND_SCHEMAS),
    "dataset": ["NullDataset", "FileListDataset"],
    "splitter": ["ArgSplitter", "FileDatasetSplitter"],
    "merger": ["TextMerger", "TableSumMerger"],
}


def _enabled(enabled_plugins: Optional[dict], category: str, name: str) -> bool:
    if not enabled_plugins:
        return True
    names = enabled_plugins.get(category)
    if names is None:
        return True
    return name in names


def build_registry(enabled_plugins: Optional[dict] = None) -> PluginRegistry:
    """Create a registry holding the enabled subset of the built-in plugins."""
    registry = PluginRegistry()

    if _enabled(enabled_plugins, "application", "Executable"):
        registry.register_plugin(EXECUTABLE_SCHEMA, ExecutableBehavior(),
                                 EXECUTABLE_MIGRATIONS)
    datasets = {
        "NullDataset": NULL_DATASET_SCHEMA,
        "FileListDataset": FILE_LIST_DATASET_SCHEMA,
    }
    for name, schema in datasets.items():
        if _enabled(enabled_plugins, "dataset", name):
            registry.register_plugin(schema)

    backend_names = []
    for name, schema in BUILTIN_BACKEND_SCHEMAS.items():
        if _enabled(enabled_plugins, "backend", name):
            registry.register_plugin(schema)
            backend_names.append(name)

    splitters = {
        "ArgSplitter": (ARG_SPLITTER_SCHEMA, ArgSplitterBehavior()),
        "FileDatasetSplitter": (FILE_DATASET_SPLITTER_SCHEMA, FileDatasetSplitterBehavior()),
    }
    for name, (schema, behavior) in splitters.items():
        if _enabled(enabled_plugins, "splitter", name):
            registry.register_plugin(schema, behavior)

    mergers = {
        "TextMerger": (TEXT_MERGER_SCHEMA, TextMergerBehavior()),
        "TableSumMerger": (TABLE_SUM_MERGER_SCHEMA, TableSumMergerBehavior()),
    }
    for name, (schema, behavior) in mergers.items():
        if _enabled(enabled_plugins, "merger", name):
            registry.register_plugin(schema, behavior)

    if registry.is_registered(Category.APPLICATION, "Executable"):
        register_executable_handlers(registry, backend_names)
    return registry


def build_backends(workspace_root, backend_configs: Optional[dict] = None,
                   enabled_plugins: Optional[dict] = None) -> dict:
    """Instantiate one execution backend per enabled backend plugin."""
    workspace_root = Path(workspace_root)
    configs = backend_configs or {}
    backends = {}
    if _enabled(enabled_plugins, "backend", "Local"):
        backends["Local"] = LocalBackend()
    if _enabled(enabled_plugins, "backend", "BatchSim"):
        backends["BatchSim"] = BatchSimBackend(
            configs.get("BatchSim") or BatchSimConfig()
        )
    if _enabled(enabled_plugins, "backend", "RemoteShell"):
        config = configs.get("RemoteShell") or RemoteShellConfig()
        if config.remote_root is None:
            config.remote_root = workspace_root / ".remote"
        backends["RemoteShell"] = RemoteShellBackend(config)
    if _enabled(enabled_plugins, "backend", "MockGrid"):
        config = configs.get("MockGrid") or MockGridConfig()
        if config.spool_root is None:
            config.spool_root = workspace_root / ".gridspool"
        backends["MockGrid"] = MockGridBackend(config)
    return backends
