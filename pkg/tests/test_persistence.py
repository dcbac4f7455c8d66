import json
import random
import shutil
import subprocess
import time
from pathlib import Path

import pytest

from taskyard.builtins import build_registry
from taskyard.core import Job, JobStatus
from taskyard.errors import (
    FileMissing,
    InvalidFilter,
    MigrationGap,
    NotEmpty,
    PathExists,
    PathMissing,
    PeekUnavailable,
    SandboxSizeWarning,
    SessionLocked,
    UnknownJob,
    UnknownTemplate,
)
from taskyard.persistence import JobRepository, Workspace, migrate_record
from taskyard.persistence.records import job_from_record, record_document
from taskyard.plugins import (
    AttributeDescriptor,
    Category,
    PluginSchema,
    ValueType,
)

from .conftest import make_echo_job, run_to_completion

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def repo(tmp_path, registry):
    workspace = Workspace(tmp_path / "ws")
    repository = JobRepository(tmp_path / "repo", registry, workspace=workspace)
    yield repository
    repository.close()


def bare_job(registry, repo, name="", backend="Local", status=None,
             application=None):
    job = Job(
        id=repo.allocate_job_id(),
        application=registry.create(
            "application", application or {"type": "Executable", "exe": "/bin/echo"}),
        backend=registry.create("backend", {"type": backend}),
        name=name,
    )
    if status is not None:
        job.status = JobStatus(status)
    repo.save(job)
    return job


class TestSaveLoad:
    def test_restart_round_trip(self, tmp_path, registry):
        workspace = Workspace(tmp_path / "ws")
        repo = JobRepository(tmp_path / "repo", registry, workspace=workspace)
        job = bare_job(registry, repo, name="persist-me")
        job.application.set_system("env", {"K": "V"})
        repo.save(job)
        repo.close()

        fresh = JobRepository(tmp_path / "repo", registry, workspace=workspace)
        loaded = fresh.load(job.id)
        assert loaded.name == "persist-me"
        assert loaded.application.get("env") == {"K": "V"}
        assert loaded.status is JobStatus.NEW
        fresh.close()

    def test_save_unchanged_is_noop(self, repo, registry):
        job = bare_job(registry, repo)
        record = repo._record_path(job.id)
        first_mtime = record.stat().st_mtime_ns
        repo.save(job)
        assert record.stat().st_mtime_ns == first_mtime

    def test_load_unknown(self, repo):
        with pytest.raises(UnknownJob):
            repo.load(404)

    def test_remove_then_load(self, repo, registry):
        job = bare_job(registry, repo)
        repo.remove(job.id)
        with pytest.raises(UnknownJob):
            repo.load(job.id)

    def test_remove_deletes_subjob_workspaces(self, session):
        job = session.create_job(
            application={"type": "Executable", "exe": "/bin/echo"},
            backend={"type": "Local"},
            splitter={"type": "ArgSplitter", "args": ["a", "b"]},
        )
        session.submit(job.id)
        run_to_completion(session, job.id)
        sub_dir = session.workspace.job_dir(job.subjobs[0])
        assert sub_dir.exists()
        session.remove(job.id)
        assert not sub_dir.exists()
        assert not session.workspace.job_dir(job).exists()

    def test_index_rebuilt_when_missing(self, tmp_path, registry):
        repo = JobRepository(tmp_path / "repo", registry)
        ids = [bare_job(registry, repo, name=f"j{i}").id for i in range(5)]
        repo.close()
        (tmp_path / "repo" / "index.jsonl").unlink()
        fresh = JobRepository(tmp_path / "repo", registry)
        assert [j.id for j in fresh.all_jobs()] == ids
        fresh.close()

    def test_mean_save_latency_sane(self, repo, registry):
        start = time.perf_counter()
        for i in range(100):
            bare_job(registry, repo, name=f"fast{i}")
        mean = (time.perf_counter() - start) / 100
        assert mean <= 0.2


class TestRandomizedRoundTrip:
    from hypothesis import given, settings
    from hypothesis import strategies as st

    names = st.text(alphabet="abcdefghij-_", min_size=0, max_size=12)
    words = st.text(alphabet="abcxyz0189/._", min_size=1, max_size=10)

    @settings(max_examples=60, deadline=None)
    @given(
        name=names,
        exe=words,
        args=st.lists(words, max_size=4),
        env=st.dictionaries(st.sampled_from(["A", "B", "PATH2"]), words,
                            max_size=3),
        queue=st.sampled_from(["", "default", "longq"]),
        files=st.lists(words, max_size=4),
        per=st.integers(min_value=1, max_value=5),
        sandbox=st.lists(words, max_size=3),
        status=st.sampled_from(list(JobStatus)),
    )
    def test_load_save_identity(self, name, exe, args, env,
                                queue, files, per, sandbox, status):
        registry = build_registry()
        job = Job(
            id=7,
            application=registry.create("application", {
                "type": "Executable", "exe": exe, "args": args, "env": env}),
            backend=registry.create("backend",
                                    {"type": "BatchSim", "queue": queue}),
            inputdata=registry.create("dataset", {
                "type": "FileListDataset", "files": files}),
            splitter=registry.create("splitter", {
                "type": "FileDatasetSplitter", "files_per_subjob": per}),
            merger=registry.create("merger", {"type": "TextMerger"}),
            name=name,
            input_sandbox=sandbox,
        )
        job.status = status
        document = record_document(job, registry)
        # the document survives a JSON print/parse cycle and reloads equal
        reparsed = json.loads(json.dumps(document))
        loaded = job_from_record(reparsed, registry)
        assert loaded.name == job.name
        assert loaded.status is job.status
        assert loaded.input_sandbox == job.input_sandbox
        for slot in ("application", "backend", "inputdata", "splitter",
                     "merger"):
            assert getattr(loaded, slot).values == getattr(job, slot).values


class TestAtomicity:
    def test_interrupted_rename_leaves_record_intact(self, tmp_path, registry):
        import taskyard.persistence.repository as repo_module

        repo = JobRepository(tmp_path / "repo", registry)
        job = bare_job(registry, repo, name="original")
        record_path = repo._record_path(job.id)
        before = record_path.read_bytes()

        real_replace = repo_module.os.replace
        calls = {"n": 0}

        def flaky_replace(src, dst):
            calls["n"] += 1
            if calls["n"] % 2 == 1:
                raise OSError("injected crash before rename")
            return real_replace(src, dst)

        repo_module.os.replace = flaky_replace
        try:
            for attempt in range(6):
                job.set_name(f"renamed-{attempt}")
                try:
                    repo.save(job)
                except OSError:
                    pass
                # the record on disk is always one complete version
                data = json.loads(record_path.read_bytes())
                assert data["metadata"]["name"] in (
                    ["original"] + [f"renamed-{i}" for i in range(6)]
                )
        finally:
            repo_module.os.replace = real_replace
        assert json.loads(before)["metadata"]["name"] == "original"
        repo.close()


class TestSelect:
    def seed(self, registry, repo):
        backends = ["Local", "BatchSim", "MockGrid"]
        statuses = ["new", "submitted", "running", "completed", "failed", "killed"]
        rng = random.Random(11)
        jobs = []
        for i in range(40):
            jobs.append(bare_job(
                registry, repo,
                name=rng.choice(["alpha", "beta", "testjob", f"job{i}"]),
                backend=rng.choice(backends),
                status=rng.choice(statuses),
            ))
        return jobs

    def test_no_predicates_returns_all(self, repo, registry):
        self.seed(registry, repo)
        assert len(repo.select()) == 40

    def test_oracle_equivalence(self, repo, registry):
        self.seed(registry, repo)
        filters = [
            {"status": "failed"},
            {"name": "testjob"},
            {"name": "job*"},
            {"backend_type": "MockGrid"},
            {"status": "completed", "backend_type": "Local"},
            {"id_range": (5, 15)},
            {"status": "new", "name": "alpha"},
        ]
        for spec in filters:
            got = [j.id for j in repo.select(**spec)]
            expected = []
            for job in repo.all_jobs():  # brute-force linear scan
                ok = True
                if "status" in spec and job.status.value != spec["status"]:
                    ok = False
                if "name" in spec:
                    import fnmatch

                    if not fnmatch.fnmatchcase(job.name, spec["name"]):
                        ok = False
                if "backend_type" in spec and \
                        job.backend.type_name != spec["backend_type"]:
                    ok = False
                if "id_range" in spec:
                    lo, hi = spec["id_range"]
                    if not (lo <= job.id <= hi):
                        ok = False
                if ok:
                    expected.append(job.id)
            assert got == sorted(expected), f"filter {spec}"

    def test_results_ordered_by_id(self, repo, registry):
        self.seed(registry, repo)
        ids = [j.id for j in repo.select(status="new")]
        assert ids == sorted(ids)

    def test_invalid_filter_key(self, repo):
        with pytest.raises(InvalidFilter):
            repo.select(color="red")

    def test_invalid_status_value(self, repo):
        with pytest.raises(InvalidFilter):
            repo.select(status="sleeping")

    def test_selection_resubmit_skips_illegal(self, session):
        good = make_echo_job(session, name="will-fail", args=[])
        # a job that fails: nonzero exit
        failing = session.create_job(
            application={"type": "Executable", "exe": "/bin/false"},
            backend={"type": "Local"}, name="failing")
        session.submit(failing.id)
        run_to_completion(session, failing.id)
        assert failing.status is JobStatus.FAILED

        outcomes = session.select().resubmit()
        by_id = {o["id"]: o for o in outcomes}
        assert by_id[failing.id]["ok"] is True
        assert by_id[failing.id]["status"] == "submitted"
        assert by_id[good.id]["ok"] is False  # still new, resubmit illegal
        assert by_id[good.id]["error"] == "IllegalTransition"


class TestTemplates:
    def test_instantiate_twice_distinct_jobs(self, session):
        job = make_echo_job(session, name="proto")
        template = session.save_template(job.id, name="echo-template")
        first = session.instantiate_template(template.template_id)
        second = session.instantiate_template(template.template_id)
        assert first.id != second.id
        assert first.status is JobStatus.NEW
        assert first.application.get("exe") == "/bin/echo"

    def test_instantiate_with_override(self, session):
        job = make_echo_job(session)
        template = session.save_template(job.id)
        new_job = session.instantiate_template(
            template.template_id, backend={"type": "BatchSim", "queue": "default"})
        assert new_job.backend.type_name == "BatchSim"
        assert new_job.backend.get("queue") == "default"

    def test_template_not_mutated_by_instantiation(self, session):
        job = make_echo_job(session)
        template = session.save_template(job.id, name="stable")
        created = session.instantiate_template(template.template_id)
        created.application.set_system("exe", "/bin/true")
        reloaded = session.repository.load_template(template.template_id)
        assert reloaded.payload.application.get("exe") == "/bin/echo"

    def test_unknown_template(self, session):
        with pytest.raises(UnknownTemplate):
            session.instantiate_template(99)

    def test_templates_survive_restart(self, tmp_path, registry):
        repo = JobRepository(tmp_path / "repo", registry)
        job = bare_job(registry, repo, name="tpl")
        template = repo.save_template(job, name="saved")
        repo.close()
        fresh = JobRepository(tmp_path / "repo", registry)
        loaded = fresh.load_template(template.template_id)
        assert loaded.name == "saved"
        fresh.close()


class TestJobTree:
    def test_mkdir_add_list(self, repo, registry):
        job = bare_job(registry, repo)
        repo.jobtree.mkdir("/analysis")
        repo.jobtree.mkdir("/analysis/2008")
        repo.jobtree.add("/analysis/2008", job.id)
        node = repo.jobtree.list("/analysis/2008")
        assert node["job_ids"] == [job.id]
        assert repo.jobtree.list("/")["children"] == ["analysis"]

    def test_job_under_two_paths(self, repo, registry):
        job = bare_job(registry, repo)
        repo.jobtree.mkdir("/a")
        repo.jobtree.mkdir("/b")
        repo.jobtree.add("/a", job.id)
        repo.jobtree.add("/b", job.id)
        assert repo.jobtree.list("/a")["job_ids"] == [job.id]
        assert repo.jobtree.list("/b")["job_ids"] == [job.id]

    def test_remove_job_scrubs_tree(self, repo, registry):
        job = bare_job(registry, repo)
        repo.jobtree.mkdir("/x")
        repo.jobtree.add("/x", job.id)
        repo.remove(job.id)
        assert repo.jobtree.list("/x")["job_ids"] == []

    def test_rm_nonempty_requires_recursive(self, repo, registry):
        job = bare_job(registry, repo)
        repo.jobtree.mkdir("/full")
        repo.jobtree.add("/full", job.id)
        with pytest.raises(NotEmpty):
            repo.jobtree.rm("/full")
        repo.jobtree.rm("/full", recursive=True)
        with pytest.raises(PathMissing):
            repo.jobtree.list("/full")

    def test_mkdir_existing_path(self, repo):
        repo.jobtree.mkdir("/dup")
        with pytest.raises(PathExists):
            repo.jobtree.mkdir("/dup")

    def test_missing_path(self, repo):
        with pytest.raises(PathMissing):
            repo.jobtree.add("/nowhere", 1)

    def test_tree_persists(self, tmp_path, registry):
        repo = JobRepository(tmp_path / "repo", registry)
        repo.jobtree.mkdir("/keep")
        repo.close()
        fresh = JobRepository(tmp_path / "repo", registry)
        assert "keep" in fresh.jobtree.list("/")["children"]
        fresh.close()


class TestMigration:
    def test_v1_fixture_under_v2_registry(self, tmp_path, registry):
        # committed v1 record: no env (new in v2), has shell (removed in v2)
        repo_root = tmp_path / "repo"
        (repo_root / "jobs" / "0").mkdir(parents=True)
        shutil.copy(FIXTURES / "v1_executable_record.json",
                    repo_root / "jobs" / "0" / "record.json")
        repo = JobRepository(repo_root, registry)
        job = repo.load(0)
        assert job.application.get("env") == {}  # defaulted new attribute
        assert job.application.quarantine == {"shell": False}  # audit trail
        assert job.application.get("args") == ["hello"]
        assert not job.read_only
        repo.close()

    def test_current_version_identity(self, registry, repo):
        job = bare_job(registry, repo)
        document = record_document(job, registry)
        assert migrate_record(document, registry) == document

    def test_chain_applied_in_order(self):
        trace = []

        def hop1(attrs):
            trace.append(("v1->v2", dict(attrs)))
            attrs["second"] = "from-v2"
            return attrs

        def hop2(attrs):
            trace.append(("v2->v3", dict(attrs)))
            attrs["third"] = "from-v3"
            return attrs

        from taskyard.plugins import PluginRegistry

        registry = PluginRegistry()
        registry.register_plugin(
            PluginSchema("ChainApp", Category.APPLICATION, version=3, attributes=[
                AttributeDescriptor("first", ValueType.STRING),
                AttributeDescriptor("second", ValueType.STRING),
                AttributeDescriptor("third", ValueType.STRING),
            ]),
            migrations={1: hop1, 2: hop2},
        )
        registry.register_plugin(
            PluginSchema("Local", Category.BACKEND, version=1, attributes=[]))
        document = {
            "format": 1,
            "job_id": 0,
            "schema_versions": {"ChainApp": 1, "Local": 1},
            "metadata": {},
            "payload": {
                "name": "", "status": "new", "subjob_index": None,
                "application": {"type": "ChainApp", "first": "v1-value"},
                "backend": {"type": "Local"},
                "subjobs": [],
            },
        }
        migrated = migrate_record(document, registry)
        assert [step for step, _ in trace] == ["v1->v2", "v2->v3"]
        app = migrated["payload"]["application"]
        assert app["second"] == "from-v2"
        assert app["third"] == "from-v3"
        assert migrated["schema_versions"]["ChainApp"] == 3

    def test_migration_gap_loads_read_only(self):
        from taskyard.errors import JobNotModifiable
        from taskyard.plugins import PluginRegistry

        registry = PluginRegistry()
        registry.register_plugin(
            PluginSchema("GapApp", Category.APPLICATION, version=2, attributes=[
                AttributeDescriptor("value", ValueType.STRING),
            ]))
        registry.register_plugin(
            PluginSchema("Local", Category.BACKEND, version=1, attributes=[]))
        document = {
            "format": 1,
            "job_id": 5,
            "schema_versions": {"GapApp": 1, "Local": 1},
            "metadata": {},
            "payload": {
                "name": "stuck", "status": "new", "subjob_index": None,
                "application": {"type": "GapApp", "value": "old"},
                "backend": {"type": "Local"},
                "subjobs": [],
            },
        }
        with pytest.raises(MigrationGap):
            migrate_record(document, registry)
        job = job_from_record(document, registry)
        assert job.read_only
        assert job.application.get("value") == "old"
        with pytest.raises(JobNotModifiable):
            job.set_name("nope")


class TestSessionLock:
    def test_second_open_refused(self, tmp_path, registry):
        repo = JobRepository(tmp_path / "repo", registry)
        with pytest.raises(SessionLocked):
            JobRepository(tmp_path / "repo", registry)
        repo.close()

    def test_stale_lock_reclaimed(self, tmp_path, registry):
        proc = subprocess.Popen(["/bin/true"])
        proc.wait()
        root = tmp_path / "repo"
        root.mkdir()
        (root / ".session.lock").write_text(f"{proc.pid}\n")
        repo = JobRepository(root, registry)  # dead pid: lock reclaimed
        assert (root / ".session.lock").read_text().strip() != str(proc.pid)
        repo.close()

    def test_close_releases(self, tmp_path, registry):
        repo = JobRepository(tmp_path / "repo", registry)
        repo.close()
        again = JobRepository(tmp_path / "repo", registry)
        again.close()


class TestWorkspace:
    def test_stage_and_run_layout(self, session, tmp_path):
        payload = tmp_path / "input.txt"
        payload.write_text("data")
        job = make_echo_job(session, input_sandbox=[str(payload)])
        session.workspace.stage_input(job)
        assert (session.workspace.input_dir(job) / "input.txt").exists()

    def test_oversize_sandbox_warns_but_stages(self, session, tmp_path):
        big = tmp_path / "big.bin"
        big.write_bytes(b"\0" * (11 * 1024 * 1024))
        job = make_echo_job(session, input_sandbox=[str(big)])
        with pytest.warns(SandboxSizeWarning):
            session.workspace.stage_input(job)
        assert (session.workspace.input_dir(job) / "big.bin").stat().st_size \
            == 11 * 1024 * 1024

    def test_missing_sandbox_file(self, session):
        job = make_echo_job(session, input_sandbox=["/no/such/file"])
        with pytest.raises(FileMissing):
            session.workspace.stage_input(job)

    def test_peek_completed_job(self, session):
        job = make_echo_job(session)
        session.submit(job.id)
        run_to_completion(session, job.id)
        assert session.peek(job.id).strip() == "hi"

    def test_peek_zero_lines(self, session):
        job = make_echo_job(session)
        session.submit(job.id)
        run_to_completion(session, job.id)
        assert session.peek(job.id, "stdout", 0) == ""

    def test_peek_last_n_lines(self, session):
        job = session.create_job(
            application={"type": "Executable", "exe": "/bin/sh",
                         "args": ["-c", "printf 'a\\nb\\nc\\n'"]},
            backend={"type": "Local"})
        session.submit(job.id)
        run_to_completion(session, job.id)
        assert session.peek(job.id, "stdout", 2) == "b\nc\n"

    def test_peek_unavailable(self, session):
        job = make_echo_job(session)
        with pytest.raises(PeekUnavailable):
            session.peek(job.id, "stdout")
