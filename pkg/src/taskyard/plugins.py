"""Plugin registry with declarative schemas, typed component instances and
user-facing proxy views.

A plugin is described by a :class:`PluginSchema` (attribute names, types,
access levels, defaults) plus a behavior object supplying the callbacks the
engine needs (configure/postprocess for applications, split for splitters,
merge for mergers, an execution backend class for backends).  Everything the
system does with a component -- persistence, migration, proxy views, HTTP
documents, UI forms -- is driven by the schema, never by per-plugin code in
those layers.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Optional

from .errors import (
    AttributeNotVisible,
    AttributeReadOnly,
    ConfigError,
    DuplicatePlugin,
    InvalidCategory,
    JobNotModifiable,
    MalformedSchema,
    NoHandler,
    UnknownPlugin,
)

logger = logging.getLogger(__name__)


class Category(str, Enum):
    APPLICATION = "application"
    BACKEND = "backend"
    DATASET = "dataset"
    SPLITTER = "splitter"
    MERGER = "merger"

    @classmethod
    def parse(cls, value) -> "Category":
        if isinstance(value, Category):
            return value
        try:
            return cls(value)
        except ValueError:
            raise InvalidCategory(f"unknown plugin category {value!r}")


class ValueType(str, Enum):
    STRING = "string"
    INTEGER = "integer"
    FLOAT = "float"
    BOOLEAN = "boolean"
    PATH = "path"
    STRING_LIST = "string_list"
    STRING_MAP = "string_map"


class Access(str, Enum):
    READ_WRITE = "read_write"
    READ_ONLY = "read_only"
    INTERNAL = "internal"


_EMPTY_DEFAULTS = {
    ValueType.STRING: "",
    ValueType.INTEGER: 0,
    ValueType.FLOAT: 0.0,
    ValueType.BOOLEAN: False,
    ValueType.PATH: "",
    ValueType.STRING_LIST: [],
    ValueType.STRING_MAP: {},
}


def coerce_value(value_type: ValueType, value, *, shortcut: bool = True):
    """Validate ``value`` against ``value_type``, applying convenience shortcuts.

    Shortcuts implemented: a scalar string where a string_list is expected
    becomes a singleton list; plain strings are accepted for paths.
    Raises ConfigError for anything that does not fit.
    """
    if value is None:
        return copy.deepcopy(_EMPTY_DEFAULTS[value_type])
    if value_type in (ValueType.STRING, ValueType.PATH):
        if isinstance(value, str):
            return value
        raise ConfigError(f"expected a string, got {type(value).__name__}")
    if value_type is ValueType.INTEGER:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}")
        return value
    if value_type is ValueType.FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}")
        return float(value)
    if value_type is ValueType.BOOLEAN:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"expected a boolean, got {value!r}")
    if value_type is ValueType.STRING_LIST:
        if isinstance(value, str) and shortcut:
            return [value]
        if isinstance(value, (list, tuple)) and all(isinstance(v, str) for v in value):
            return list(value)
        raise ConfigError(f"expected a list of strings, got {value!r}")
    if value_type is ValueType.STRING_MAP:
        if isinstance(value, dict) and all(
            isinstance(k, str) and isinstance(v, str) for k, v in value.items()
        ):
            return dict(value)
        raise ConfigError(f"expected a string-to-string map, got {value!r}")
    raise ConfigError(f"unsupported value type {value_type!r}")


@dataclass
class AttributeDescriptor:
    name: str
    value_type: ValueType
    access: Access = Access.READ_WRITE
    default: Any = None
    doc: str = ""
    shortcut: bool = True

    def __post_init__(self):
        self.value_type = ValueType(self.value_type)
        self.access = Access(self.access)
        if self.default is None:
            self.default = copy.deepcopy(_EMPTY_DEFAULTS[self.value_type])

    @property
    def visible(self) -> bool:
        return self.access is not Access.INTERNAL


@dataclass
class PluginSchema:
    plugin_name: str
    category: Category
    version: int = 1
    attributes: list[AttributeDescriptor] = field(default_factory=list)
    doc: str = ""

    def __post_init__(self):
        self.category = Category.parse(self.category)
        if self.version < 1:
            raise MalformedSchema(f"{self.plugin_name}: version must be >= 1")
        seen = set()
        for attr in self.attributes:
            if attr.name in seen:
                raise MalformedSchema(
                    f"{self.plugin_name}: duplicate attribute {attr.name!r}"
                )
            if attr.name in ("type", "__quarantine__"):
                raise MalformedSchema(
                    f"{self.plugin_name}: attribute name {attr.name!r} is reserved"
                )
            seen.add(attr.name)
            try:
                attr.default = coerce_value(attr.value_type, attr.default)
            except ConfigError as exc:
                raise MalformedSchema(
                    f"{self.plugin_name}.{attr.name}: bad default ({exc})"
                )

    def attribute(self, name: str) -> AttributeDescriptor:
        for attr in self.attributes:
            if attr.name == name:
                return attr
        raise ConfigError(f"{self.plugin_name} has no attribute {name!r}")

    def has_attribute(self, name: str) -> bool:
        return any(a.name == name for a in self.attributes)

    def defaults(self) -> dict:
        return {a.name: copy.deepcopy(a.default) for a in self.attributes}


class ComponentInstance:
    """A configured plugin component: schema plus concrete attribute values.

    Values always cover every schema attribute (internal ones included).
    When the instance is attached to a job, user-path writes are refused
    once the job has been submitted.
    """

    def __init__(self, schema: PluginSchema, values: Optional[dict] = None):
        self.schema = schema
        self.values = schema.defaults()
        self.owner = None  # set when attached to a Job
        self.quarantine: dict = {}  # attributes preserved across schema migrations
        if values:
            for name, value in values.items():
                attr = schema.attribute(name)
                self.values[name] = coerce_value(
                    attr.value_type, value, shortcut=attr.shortcut
                )

    @property
    def type_name(self) -> str:
        return self.schema.plugin_name

    @property
    def category(self) -> Category:
        return self.schema.category

    def get(self, name: str):
        self.schema.attribute(name)
        return copy.deepcopy(self.values[name])

    def set_system(self, name: str, value):
        """Write an attribute on behalf of the system (no access-level checks)."""
        attr = self.schema.attribute(name)
        self.values[name] = coerce_value(attr.value_type, value, shortcut=attr.shortcut)

    def set_user(self, name: str, value):
        """Write an attribute on behalf of the user, enforcing access levels."""
        attr = self.schema.attribute(name)
        if attr.access is Access.INTERNAL:
            raise AttributeNotVisible(
                f"{self.type_name}.{name} is internal", attribute=name
            )
        if attr.access is Access.READ_ONLY:
            raise AttributeReadOnly(
                f"{self.type_name}.{name} is read-only", attribute=name
            )
        if self.owner is not None and not self.owner.is_modifiable():
            raise JobNotModifiable(
                f"job {self.owner.fqid} is {self.owner.status.value}; "
                "copy it to make changes"
            )
        self.values[name] = coerce_value(attr.value_type, value, shortcut=attr.shortcut)

    def copy(self) -> "ComponentInstance":
        clone = ComponentInstance(self.schema)
        clone.values = copy.deepcopy(self.values)
        clone.quarantine = copy.deepcopy(self.quarantine)
        return clone

    def to_document(self, *, include_internal: bool) -> dict:
        doc = {"type": self.type_name}
        for attr in self.schema.attributes:
            if include_internal or attr.visible:
                doc[attr.name] = copy.deepcopy(self.values[attr.name])
        if include_internal and self.quarantine:
            doc["__quarantine__"] = copy.deepcopy(self.quarantine)
        return doc

    def __repr__(self):
        return f"<{self.type_name} {self.values!r}>"


class ProxyView:
    """User-visible projection of a component instance.

    Only read_write and read_only attributes are exposed; reads hand out
    value copies, so mutating a returned list or map never touches the
    component (copy-by-value semantics).
    """

    __slots__ = ("_instance",)

    def __init__(self, instance: ComponentInstance):
        object.__setattr__(self, "_instance", instance)

    def __getattr__(self, name):
        instance = object.__getattribute__(self, "_instance")
        if not instance.schema.has_attribute(name):
            raise AttributeError(name)
        attr = instance.schema.attribute(name)
        if not attr.visible:
            raise AttributeNotVisible(
                f"{instance.type_name}.{name} is internal", attribute=name
            )
        return instance.get(name)

    def __setattr__(self, name, value):
        instance = object.__getattribute__(self, "_instance")
        instance.set_user(name, value)

    def __dir__(self):
        instance = object.__getattribute__(self, "_instance")
        return [a.name for a in instance.schema.attributes if a.visible]

    def attribute_names(self) -> list[str]:
        return list(self.__dir__())

    def to_dict(self) -> dict:
        instance = object.__getattribute__(self, "_instance")
        return instance.to_document(include_internal=False)

    def copy(self) -> "ProxyView":
        instance = object.__getattribute__(self, "_instance")
        return ProxyView(instance.copy())


def proxy_view(instance: ComponentInstance) -> ProxyView:
    return ProxyView(instance)


@dataclass
class ConfiguredApplication:
    """Result of the application pre-processing step, ready for a backend."""

    command_line: list[str]
    environment: dict[str, str] = field(default_factory=dict)
    staged_files: list[str] = field(default_factory=list)
    expected_outputs: list[str] = field(default_factory=list)


@dataclass
class ValidationResult:
    ok: bool
    reason: str = ""

    @classmethod
    def valid(cls):
        return cls(True)

    @classmethod
    def invalid(cls, reason: str):
        return cls(False, reason)


@dataclass
class RegisteredPlugin:
    schema: PluginSchema
    behavior: Any = None
    migrations: dict[int, Callable[[dict], dict]] = field(default_factory=dict)
    order: int = 0


class PluginRegistry:
    """Runtime registry of plugin schemas, behaviors and migration hooks.

    Written during startup/configuration only; afterwards treated as
    read-only and shared freely between threads.
    """

    def __init__(self):
        self._plugins: dict[Category, dict[str, RegisteredPlugin]] = {
            cat: {} for cat in Category
        }
        self._handlers: dict[tuple[str, str], "SubmissionHandler"] = {}
        self._order = 0

    # -- registration ---------------------------------------------------

    def register_plugin(self, schema: PluginSchema, behavior=None, migrations=None):
        table = self._plugins[schema.category]
        existing = table.get(schema.plugin_name)
        if existing is not None and schema.version <= existing.schema.version:
            raise DuplicatePlugin(
                f"{schema.category.value} plugin {schema.plugin_name!r} "
                f"already registered at version {existing.schema.version}"
            )
        merged_migrations = dict(existing.migrations) if existing else {}
        merged_migrations.update(migrations or {})
        self._order += 1
        table[schema.plugin_name] = RegisteredPlugin(
            schema=schema,
            behavior=behavior,
            migrations=merged_migrations,
            order=self._order if existing is None else existing.order,
        )
        logger.debug(
            "registered %s plugin %s v%d",
            schema.category.value, schema.plugin_name, schema.version,
        )

    def register_handler(self, handler: "SubmissionHandler"):
        key = (handler.application_type, handler.backend_type)
        if key in self._handlers:
            raise DuplicatePlugin(
                f"submission handler for {key} already registered"
            )
        self._handlers[key] = handler

    # -- lookups ----------------------------------------------------------

    def lookup(self, category, name: str) -> RegisteredPlugin:
        category = Category.parse(category)
        try:
            return self._plugins[category][name]
        except KeyError:
            raise UnknownPlugin(
                f"no {category.value} plugin named {name!r}", name=name
            )

    def schema_of(self, category, name: str) -> PluginSchema:
        return self.lookup(category, name).schema

    def behavior_of(self, category, name: str):
        return self.lookup(category, name).behavior

    def migrations_of(self, category, name: str) -> dict:
        return self.lookup(category, name).migrations

    def is_registered(self, category, name: str) -> bool:
        try:
            self.lookup(category, name)
            return True
        except UnknownPlugin:
            return False

    def list_plugins(self, category=None) -> list[PluginSchema]:
        if category is not None:
            cats = [Category.parse(category)]
        else:
            cats = list(Category)
        entries = []
        for cat in cats:
            entries.extend(self._plugins[cat].values())
        entries.sort(key=lambda e: e.order)
        return [e.schema for e in entries]

    def resolve_handler(self, application_type: str, backend_type: str) -> "SubmissionHandler":
        try:
            return self._handlers[(application_type, backend_type)]
        except KeyError:
            raise NoHandler(
                f"no submission handler for application {application_type!r} "
                f"on backend {backend_type!r}",
                application=application_type,
                backend=backend_type,
            )

    # -- instances --------------------------------------------------------

    def create(self, category, document) -> ComponentInstance:
        """Build a component instance from a user document {type: ..., attr: ...}."""
        category = Category.parse(category)
        if isinstance(document, ComponentInstance):
            if document.category is not category:
                raise ConfigError(
                    f"component {document.type_name} is a {document.category.value}, "
                    f"not a {category.value}"
                )
            return document
        if not isinstance(document, dict) or "type" not in document:
            raise ConfigError(
                f"a {category.value} document must be a map with a 'type' key"
            )
        doc = dict(document)
        name = doc.pop("type")
        schema = self.schema_of(category, name)
        for key in doc:
            if not schema.has_attribute(key):
                raise ConfigError(
                    f"{name} has no attribute {key!r}", attribute=key
                )
            if not schema.attribute(key).visible:
                raise AttributeNotVisible(
                    f"{name}.{key} is internal", attribute=key
                )
        return ComponentInstance(schema, doc)


@dataclass(frozen=True)
class SubmissionHandler:
    """Translator from a configured application to one backend's job description.

    ``translate`` receives (configured_app, backend_component, context) and
    returns the keyword arguments understood by the backend's describe step;
    its existence is what marks an application/backend pair as supported.
    """

    application_type: str
    backend_type: str
    translate: Callable[..., dict]


# --------------------------------------------------------------------------
# Built-in application: Executable
# --------------------------------------------------------------------------

EXECUTABLE_SCHEMA = PluginSchema(
    plugin_name="Executable",
    category=Category.APPLICATION,
    version=2,
    doc="Run an executable or script with arguments and environment overrides.",
    attributes=[
        AttributeDescriptor("exe", ValueType.PATH, doc="Path to the executable binary or script."),
        AttributeDescriptor("args", ValueType.STRING_LIST, doc="Arguments passed to the executable."),
        AttributeDescriptor("env", ValueType.STRING_MAP, doc="Environment variables set before the executable runs."),
    ],
)


def _executable_migrate_v1(payload: dict) -> dict:
    # v1 records predate the env map; the old 'shell' flag has no v2
    # equivalent and is left behind for the loader to quarantine.
    payload.setdefault("env", {})
    return payload


EXECUTABLE_MIGRATIONS = {1: _executable_migrate_v1}


class ExecutableBehavior:
    """Configuration and output validation for the Executable application."""

    def configure(self, app: ComponentInstance, job) -> ConfiguredApplication:
        exe = app.get("exe")
        if not exe:
            raise ConfigError("exe not set")
        args = app.get("args")
        return ConfiguredApplication(
            command_line=[exe] + list(args),
            environment=app.get("env"),
            staged_files=list(job.input_sandbox),
            expected_outputs=list(job.output_sandbox),
        )

    def postprocess(self, app: ComponentInstance, job, output_dir) -> ValidationResult:
        from pathlib import Path

        out = Path(output_dir)
        exit_file = out / "__exitcode__"
        if not exit_file.exists():
            return ValidationResult.invalid("exit code not recorded")
        try:
            exit_code = int(exit_file.read_text().strip())
        except ValueError:
            return ValidationResult.invalid("exit code unreadable")
        if exit_code != 0:
            return ValidationResult.invalid(f"exit code {exit_code}")
        for pattern in job.output_sandbox:
            if not list(out.glob(pattern)):
                return ValidationResult.invalid(f"missing output: {pattern}")
        return ValidationResult.valid()


# --------------------------------------------------------------------------
# Built-in datasets
# --------------------------------------------------------------------------

NULL_DATASET_SCHEMA = PluginSchema(
    plugin_name="NullDataset",
    category=Category.DATASET,
    version=1,
    doc="Empty dataset placeholder.",
    attributes=[],
)

FILE_LIST_DATASET_SCHEMA = PluginSchema(
    plugin_name="FileListDataset",
    category=Category.DATASET,
    version=1,
    doc="A dataset identified by an explicit list of externally stored files.",
    attributes=[
        AttributeDescriptor("files", ValueType.STRING_LIST, doc="Files making up the dataset."),
    ],
)


def register_core_plugins(registry: PluginRegistry):
    """Register the application and dataset plugins that ship with taskyard."""
    registry.register_plugin(
        EXECUTABLE_SCHEMA,
        behavior=ExecutableBehavior(),
        migrations=EXECUTABLE_MIGRATIONS,
    )
    registry.register_plugin(NULL_DATASET_SCHEMA)
    registry.register_plugin(FILE_LIST_DATASET_SCHEMA)


def register_executable_handlers(registry: PluginRegistry, backend_types: Iterable[str]):
    """Connect Executable to every backend that can run a plain command line."""

    def translate(configured: ConfiguredApplication, backend: ComponentInstance, context) -> dict:
        return {
            "command_line": configured.command_line,
            "environment": configured.environment,
            "input_files": configured.staged_files,
            "output_patterns": configured.expected_outputs,
        }

    for backend_type in backend_types:
        registry.register_handler(
            SubmissionHandler("Executable", backend_type, translate)
        )
