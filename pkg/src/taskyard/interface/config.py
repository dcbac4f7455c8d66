"""Layered INI configuration: site < workgroup < user < command-line flags,
later wins.  Unknown sections or keys are rejected with the file, line and
the nearest valid key named.
"""

from __future__ import annotations

import configparser
import difflib
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..backends import BatchSimConfig, LatencySpec, MockGridConfig, QueueConfig, RemoteShellConfig
from ..backends.wrapper import SensorConfig
from ..errors import ConfigParseError
from ..lifecycle import MockCredential, MonitorConfig

_KNOWN_KEYS = {
    "general": {"repository_root", "workspace_root", "verbose"},
    "http": {"bind", "port", "auth_token"},
    "monitor": {"pool_size", "default_poll_rate_s", "poll_timeout_s",
                "heartbeat_interval_s", "stream_output"},
    "plugins": {"applications", "backends", "datasets", "splitters", "mergers"},
    "credential": {"enabled", "label", "ttl_s", "warn_threshold_s"},
    "events": {"log_file", "retention"},
    "backend.Local": set(),
    "backend.BatchSim": {"queues", "default_queue", "tick_interval_ms"},
    "backend.MockGrid": {"submit_latency_ms", "failure_rate", "supports_bulk",
                         "max_concurrent", "seed"},
    "backend.RemoteShell": {"launcher", "remote_root"},
}

# keys matched as prefixed families, e.g. poll_rate.MockGrid
_KNOWN_PREFIXES = {
    "monitor": ("poll_rate.",),
}

_SECTION_RE = re.compile(r"^\s*\[(?P<name>[^]]+)\]")
_KEY_RE = re.compile(r"^\s*(?P<key>[^\s=:;#][^=:]*?)\s*[=:]")


@dataclass
class ConfigFile:
    repository_root: Path = Path("~/.taskyard/repository").expanduser()
    workspace_root: Path = Path("~/.taskyard/workspace").expanduser()
    verbose: bool = False
    bind: str = "127.0.0.1"
    port: int = 8425
    auth_token: str = ""
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    enabled_plugins: Optional[dict] = None
    credential_enabled: bool = True
    credential_label: str = "mock-session"
    credential_ttl_s: float = 12 * 3600.0
    credential_warn_threshold_s: float = 600.0
    event_log_file: str = ""
    event_retention: int = 5000
    backend_configs: dict = field(default_factory=dict)

    def make_credential(self) -> Optional[MockCredential]:
        if not self.credential_enabled:
            return None
        return MockCredential(self.credential_label, self.credential_ttl_s,
                              self.credential_warn_threshold_s)

    def session_kwargs(self) -> dict:
        return {
            "enabled_plugins": self.enabled_plugins,
            "backend_configs": self.backend_configs,
            "credential": self.make_credential(),
            "monitor_config": self.monitor,
            "sensor_config": self.sensor,
            "event_log_path": self.event_log_file or None,
            "event_retention": self.event_retention,
        }


def _key_locations(path: Path) -> dict:
    """Map (section, key) -> line number, by scanning the raw text."""
    locations = {}
    section = None
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        match = _SECTION_RE.match(line)
        if match:
            section = match.group("name").strip()
            locations[(section, None)] = lineno
            continue
        if line[:1].isspace():
            continue  # continuation line
        match = _KEY_RE.match(line)
        if match and section is not None:
            locations.setdefault((section, match.group("key").strip()), lineno)
    return locations


def _suggest(key: str, section: str) -> str:
    candidates = set(_KNOWN_KEYS.get(section, set()))
    for prefix in _KNOWN_PREFIXES.get(section, ()):
        candidates.add(prefix.rstrip("."))
    matches = difflib.get_close_matches(key, sorted(candidates), n=1, cutoff=0.5)
    return f"; did you mean {matches[0]!r}?" if matches else ""


def _validate_keys(parser: configparser.ConfigParser, path: Path):
    locations = _key_locations(path)
    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            known = difflib.get_close_matches(section, sorted(_KNOWN_KEYS), n=1, cutoff=0.5)
            hint = f"; did you mean [{known[0]}]?" if known else ""
            raise ConfigParseError(
                f"unknown config section [{section}]{hint}",
                path=path, line=locations.get((section, None)),
            )
        for key in parser.options(section):
            if key in _KNOWN_KEYS[section]:
                continue
            if any(key.startswith(p) for p in _KNOWN_PREFIXES.get(section, ())):
                continue
            raise ConfigParseError(
                f"unknown config key {key!r} in [{section}]{_suggest(key, section)}",
                path=path, line=locations.get((section, key)),
            )


class _Reader:
    """Typed access to merged parser values with located errors."""

    def __init__(self, parser: configparser.ConfigParser, origin: dict):
        self.parser = parser
        self.origin = origin  # (section, key) -> (path, line)

    def _where(self, section, key):
        return self.origin.get((section, key), (None, None))

    def get(self, section, key, default=None):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key)
        return default

    def _typed(self, section, key, default, cast, kind):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return cast(raw)
        except (ValueError, TypeError):
            path, line = self._where(section, key)
            raise ConfigParseError(
                f"{key} must be {kind}, got {raw!r}", path=path, line=line
            )

    def get_int(self, section, key, default):
        return self._typed(section, key, default, int, "an integer")

    def get_float(self, section, key, default):
        return self._typed(section, key, default, float, "a number")

    def get_bool(self, section, key, default):
        raw = self.get(section, key)
        if raw is None:
            return default
        value = raw.strip().lower()
        if value in ("1", "true", "yes", "on"):
            return True
        if value in ("0", "false", "no", "off"):
            return False
        path, line = self._where(section, key)
        raise ConfigParseError(f"{key} must be a boolean, got {raw!r}",
                               path=path, line=line)

    def get_list(self, section, key):
        raw = self.get(section, key)
        if raw is None:
            return None
        return [item.strip() for item in raw.split(",") if item.strip()]


def load_config(*paths, overrides: Optional[dict] = None) -> ConfigFile:
    """Parse and merge config files in precedence order (later wins), then
    apply command-line overrides {(section, key): value}."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # backend names in keys are case-sensitive
    origin: dict = {}
    for entry in paths:
        if entry is None:
            continue
        path = Path(entry)
        if not path.exists():
            raise ConfigParseError(f"config file not found: {path}", path=path)
        layer = configparser.ConfigParser(interpolation=None)
        layer.optionxform = str
        try:
            layer.read_string(path.read_text(), source=str(path))
        except configparser.Error as exc:
            line = getattr(exc, "lineno", None)
            raise ConfigParseError(f"config syntax error: {exc.message if hasattr(exc, 'message') else exc}",
                                   path=path, line=line)
        _validate_keys(layer, path)
        locations = _key_locations(path)
        for section in layer.sections():
            if not parser.has_section(section):
                parser.add_section(section)
            for key, value in layer.items(section):
                parser.set(section, key, value)
                origin[(section, key)] = (path, locations.get((section, key)))
    for (section, key), value in (overrides or {}).items():
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, str(value))
    return _build(parser, origin)


def _build(parser: configparser.ConfigParser, origin: dict) -> ConfigFile:
    reader = _Reader(parser, origin)
    cfg = ConfigFile()

    root = reader.get("general", "repository_root")
    if root:
        cfg.repository_root = Path(root).expanduser()
    root = reader.get("general", "workspace_root")
    if root:
        cfg.workspace_root = Path(root).expanduser()
    cfg.verbose = reader.get_bool("general", "verbose", cfg.verbose)

    cfg.bind = reader.get("http", "bind", cfg.bind)
    cfg.port = reader.get_int("http", "port", cfg.port)
    cfg.auth_token = reader.get("http", "auth_token", cfg.auth_token) or ""

    monitor = MonitorConfig(
        pool_size=reader.get_int("monitor", "pool_size", 3),
        default_poll_rate_s=reader.get_float("monitor", "default_poll_rate_s", 0.5),
        poll_timeout_s=reader.get_float("monitor", "poll_timeout_s", 5.0),
    )
    if parser.has_section("monitor"):
        for key in parser.options("monitor"):
            if key.startswith("poll_rate."):
                backend = key.split(".", 1)[1]
                monitor.per_backend_poll_rate_s[backend] = \
                    reader.get_float("monitor", key, monitor.default_poll_rate_s)
    cfg.monitor = monitor
    cfg.sensor = SensorConfig(
        heartbeat_interval_s=reader.get_float("monitor", "heartbeat_interval_s", 10.0),
        stream_output=reader.get_bool("monitor", "stream_output", True),
    )

    enabled = {}
    for category, key in (("application", "applications"), ("backend", "backends"),
                          ("dataset", "datasets"), ("splitter", "splitters"),
                          ("merger", "mergers")):
        names = reader.get_list("plugins", key)
        if names is not None:
            enabled[category] = names
    cfg.enabled_plugins = enabled or None

    cfg.credential_enabled = reader.get_bool("credential", "enabled", True)
    cfg.credential_label = reader.get("credential", "label", cfg.credential_label)
    cfg.credential_ttl_s = reader.get_float("credential", "ttl_s", cfg.credential_ttl_s)
    cfg.credential_warn_threshold_s = reader.get_float(
        "credential", "warn_threshold_s", cfg.credential_warn_threshold_s)

    cfg.event_log_file = reader.get("events", "log_file", "") or ""
    cfg.event_retention = reader.get_int("events", "retention", 5000)

    cfg.backend_configs = {}
    if parser.has_section("backend.BatchSim"):
        queues = {}
        for spec in reader.get_list("backend.BatchSim", "queues") or []:
            parts = spec.split(":")
            if len(parts) != 3:
                path, line = reader._where("backend.BatchSim", "queues")
                raise ConfigParseError(
                    f"queue spec must be name:slots:walltime, got {spec!r}",
                    path=path, line=line,
                )
            queues[parts[0]] = QueueConfig(slots=int(parts[1]),
                                           max_walltime_s=int(parts[2]))
        kwargs = {}
        if queues:
            kwargs["queues"] = queues
            kwargs["default_queue"] = reader.get("backend.BatchSim", "default_queue",
                                                 next(iter(queues)))
        elif reader.get("backend.BatchSim", "default_queue"):
            kwargs["default_queue"] = reader.get("backend.BatchSim", "default_queue")
        kwargs["tick_interval_ms"] = reader.get_int("backend.BatchSim",
                                                    "tick_interval_ms", 200)
        cfg.backend_configs["BatchSim"] = BatchSimConfig(**kwargs)
    if parser.has_section("backend.MockGrid"):
        cfg.backend_configs["MockGrid"] = MockGridConfig(
            submit_latency=LatencySpec.parse(
                reader.get("backend.MockGrid", "submit_latency_ms", "fixed:0")),
            failure_rate=reader.get_float("backend.MockGrid", "failure_rate", 0.0),
            supports_bulk=reader.get_bool("backend.MockGrid", "supports_bulk", True),
            max_concurrent=reader.get_int("backend.MockGrid", "max_concurrent", 64),
            seed=reader.get_int("backend.MockGrid", "seed", 42),
        )
    if parser.has_section("backend.RemoteShell"):
        remote_root = reader.get("backend.RemoteShell", "remote_root")
        cfg.backend_configs["RemoteShell"] = RemoteShellConfig(
            launcher=reader.get("backend.RemoteShell", "launcher",
                                RemoteShellConfig().launcher),
            remote_root=Path(remote_root).expanduser() if remote_root else None,
        )
    return cfg
