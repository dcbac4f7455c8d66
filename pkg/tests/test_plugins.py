import pytest

from taskyard.errors import (
    AttributeNotVisible,
    AttributeReadOnly,
    ConfigError,
    DuplicatePlugin,
    InvalidCategory,
    MalformedSchema,
    NoHandler,
    UnknownPlugin,
)
from taskyard.persistence.records import job_from_record, record_document
from taskyard.plugins import (
    Access,
    AttributeDescriptor,
    ComponentInstance,
    PluginRegistry,
    PluginSchema,
    ValueType,
    coerce_value,
    proxy_view,
)

from .conftest import make_echo_job


def schema(name, category="application", version=1, attrs=()):
    return PluginSchema(plugin_name=name, category=category, version=version,
                        attributes=list(attrs))


class TestRegistry:
    def test_builtin_executable_listed(self, registry):
        names = [s.plugin_name for s in registry.list_plugins("application")]
        assert "Executable" in names

    def test_builtin_text_merger_listed(self, registry):
        names = [s.plugin_name for s in registry.list_plugins("merger")]
        assert "TextMerger" in names

    def test_invalid_category(self, registry):
        with pytest.raises(InvalidCategory):
            registry.list_plugins("nonsense")

    def test_duplicate_rejected(self):
        registry = PluginRegistry()
        registry.register_plugin(schema("Thing"))
        with pytest.raises(DuplicatePlugin):
            registry.register_plugin(schema("Thing"))

    def test_reregistration_with_higher_version(self):
        registry = PluginRegistry()
        registry.register_plugin(schema("Thing", version=1))
        registry.register_plugin(schema("Thing", version=2))
        assert registry.schema_of("application", "Thing").version == 2

    def test_registration_order_preserved(self):
        registry = PluginRegistry()
        names = [f"P{i:02d}" for i in range(20)]
        for name in names:
            registry.register_plugin(schema(name))
        assert [s.plugin_name for s in registry.list_plugins("application")] == names

    def test_malformed_duplicate_attribute(self):
        with pytest.raises(MalformedSchema):
            schema("Bad", attrs=[
                AttributeDescriptor("x", ValueType.STRING),
                AttributeDescriptor("x", ValueType.STRING),
            ])

    def test_malformed_bad_default(self):
        with pytest.raises(MalformedSchema):
            schema("Bad", attrs=[
                AttributeDescriptor("n", ValueType.INTEGER, default="not-a-number"),
            ])

    def test_reserved_attribute_names(self):
        with pytest.raises(MalformedSchema):
            schema("Bad", attrs=[AttributeDescriptor("type", ValueType.STRING)])

    def test_unknown_plugin(self, registry):
        with pytest.raises(UnknownPlugin):
            registry.schema_of("application", "NoSuchThing")


class TestCoercion:
    def test_scalar_to_singleton_list(self):
        assert coerce_value(ValueType.STRING_LIST, "one") == ["one"]

    def test_string_accepted_for_path(self):
        assert coerce_value(ValueType.PATH, "/bin/echo") == "/bin/echo"

    def test_integer_rejects_bool(self):
        with pytest.raises(ConfigError):
            coerce_value(ValueType.INTEGER, True)

    def test_map_values_must_be_strings(self):
        with pytest.raises(ConfigError):
            coerce_value(ValueType.STRING_MAP, {"a": 1})

    def test_none_becomes_empty(self):
        assert coerce_value(ValueType.STRING_MAP, None) == {}


class TestProxyView:
    def test_batchsim_view_exposure(self, registry):
        comp = registry.create("backend", {"type": "BatchSim"})
        view = proxy_view(comp)
        assert set(view.attribute_names()) == {"queue", "id", "status", "actualqueue"}
        view.queue = "short"
        assert comp.get("queue") == "short"

    def test_write_to_read_only_rejected(self, registry):
        view = proxy_view(registry.create("backend", {"type": "BatchSim"}))
        with pytest.raises(AttributeReadOnly):
            view.status = "done"

    def test_internal_attribute_hidden(self, registry):
        comp = registry.create("backend", {"type": "MockGrid"})
        view = proxy_view(comp)
        assert "destined_fail" not in view.attribute_names()
        with pytest.raises(AttributeNotVisible):
            view.destined_fail
        assert "destined_fail" not in view.to_dict()

    def test_no_internal_attribute_ever_visible(self, registry):
        # exhaustive over every registered schema
        for plugin_schema in registry.list_plugins():
            comp = ComponentInstance(plugin_schema)
            view = proxy_view(comp)
            visible = set(view.attribute_names())
            for attr in plugin_schema.attributes:
                if attr.access is Access.INTERNAL:
                    assert attr.name not in visible
                    assert attr.name not in view.to_dict()
                else:
                    assert attr.name in visible

    def test_reads_are_copies(self, registry):
        comp = registry.create(
            "application",
            {"type": "Executable", "args": ["a", "b"]})
        view = proxy_view(comp)
        grabbed = view.args
        grabbed.append("mutated")
        assert comp.get("args") == ["a", "b"]

    def test_user_create_cannot_set_internal(self, registry):
        with pytest.raises(AttributeNotVisible):
            registry.create("backend", {"type": "MockGrid", "destined_fail": True})


class TestRoundTrip:
    def test_all_plugins_round_trip(self, session):
        # a job touching every category; non-default and default values mixed
        job = session.create_job(
            name="roundtrip",
            application={"type": "Executable", "exe": "/bin/echo",
                         "args": ["x"], "env": {"A": "1"}},
            backend={"type": "BatchSim", "queue": "default"},
            inputdata={"type": "FileListDataset", "files": ["/d/a", "/d/b"]},
            outputdata={"type": "NullDataset"},
            splitter={"type": "ArgSplitter", "args": ["a", "b"]},
            merger={"type": "TableSumMerger", "table_file": "t.dat"},
        )
        document = record_document(job, session.registry)
        loaded = job_from_record(document, session.registry)
        for slot in ("application", "backend", "inputdata", "outputdata",
                     "splitter", "merger"):
            original = getattr(job, slot)
            restored = getattr(loaded, slot)
            assert restored.type_name == original.type_name
            assert restored.values == original.values


class TestConfigureApplication:
    def test_echo_command_line(self, session):
        job = make_echo_job(session)
        behavior = session.registry.behavior_of("application", "Executable")
        configured = behavior.configure(job.application, job)
        assert configured.command_line == ["/bin/echo", "hi"]

    def test_empty_exe_rejected(self, session):
        job = session.create_job(application={"type": "Executable", "exe": ""},
                                 backend={"type": "Local"})
        behavior = session.registry.behavior_of("application", "Executable")
        with pytest.raises(ConfigError, match="exe not set"):
            behavior.configure(job.application, job)

    def test_env_propagates(self, session):
        job = session.create_job(
            application={"type": "Executable", "exe": "/bin/echo",
                         "env": {"A": "1"}},
            backend={"type": "Local"})
        behavior = session.registry.behavior_of("application", "Executable")
        assert behavior.configure(job.application, job).environment == {"A": "1"}

    def test_deterministic_and_side_effect_free(self, session):
        job = make_echo_job(session)
        behavior = session.registry.behavior_of("application", "Executable")
        before = dict(job.application.values)
        first = behavior.configure(job.application, job)
        second = behavior.configure(job.application, job)
        assert first == second
        assert job.application.values == before


class TestPostprocess:
    def _run(self, session, exe, args=(), output_sandbox=()):
        job = session.create_job(
            application={"type": "Executable", "exe": exe, "args": list(args)},
            backend={"type": "Local"},
            output_sandbox=list(output_sandbox),
        )
        session.submit(job.id)
        return session.wait_for(job.id, timeout_s=20)

    def test_exit_zero_all_patterns_ok(self, session, tmp_path):
        job = self._run(session, "/bin/sh",
                        ["-c", "echo data > out.txt"], ["out.txt"])
        assert job.status.value == "completed"

    def test_nonzero_exit_fails(self, session):
        job = self._run(session, "/bin/sh", ["-c", "exit 3"])
        assert job.status.value == "failed"
        assert job.backend_handle.exit_code == 3

    def test_missing_output_fails(self, session):
        behavior = session.registry.behavior_of("application", "Executable")
        job = self._run(session, "/bin/echo", ["no-file"], ["out.txt"])
        assert job.status.value == "failed"
        result = behavior.postprocess(
            job.application, job, session.workspace.output_dir(job))
        assert not result.ok
        assert "missing output" in result.reason


class TestResolveHandler:
    def test_default_matrix(self, registry):
        for backend in ("Local", "BatchSim", "RemoteShell", "MockGrid"):
            handler = registry.resolve_handler("Executable", backend)
            assert handler.backend_type == backend

    def test_missing_cell(self, registry):
        with pytest.raises(NoHandler):
            registry.resolve_handler("Executable", "NoSuchBackend")

    def test_pure_lookup_same_identity(self, registry):
        first = registry.resolve_handler("Executable", "Local")
        second = registry.resolve_handler("Executable", "Local")
        assert first is second
