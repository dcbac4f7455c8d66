import subprocess
import time
from pathlib import Path

import pytest

from taskyard.backends import (
    BackendJobDescription,
    BatchSimBackend,
    BatchSimConfig,
    LatencySpec,
    LocalBackend,
    MockGridBackend,
    MockGridConfig,
    PollItem,
    QueueConfig,
    RemoteShellBackend,
    RemoteShellConfig,
    SensorConfig,
    generate_wrapper,
    parse_spool_line,
)
from taskyard.core import TransitionEvent
from taskyard.errors import AlreadyFinished, QueueUnknown, SubmitFailed
from taskyard.plugins import ConfiguredApplication

from .conftest import make_echo_job, run_to_completion


def make_desc(tmp_path, command, *, fqid="0", env=None, outputs=(),
              hints=None, heartbeat=0.1, stream=True) -> BackendJobDescription:
    run_dir = tmp_path / f"run-{fqid}"
    run_dir.mkdir(parents=True, exist_ok=True)
    configured = ConfiguredApplication(
        command_line=list(command),
        environment=dict(env or {}),
        expected_outputs=list(outputs),
    )
    wrapper = generate_wrapper(
        configured, fqid,
        SensorConfig(heartbeat_interval_s=heartbeat, stream_output=stream),
        run_dir,
    )
    return BackendJobDescription(
        job_fqid=fqid, wrapper_path=wrapper, run_dir=run_dir,
        output_patterns=list(outputs), resource_hints=dict(hints or {}),
    )


def poll_until(backend, items, predicate, timeout=15.0, interval=0.02):
    deadline = time.monotonic() + timeout
    while True:
        reports = backend.poll(items)
        if predicate(reports):
            return reports
        if time.monotonic() > deadline:
            raise AssertionError(f"timed out; last reports: {reports}")
        time.sleep(interval)


def all_terminal(reports):
    return all(r.mapped_event in (TransitionEvent.BACKEND_DONE_OK,
                                  TransitionEvent.BACKEND_DONE_ERR)
               for r in reports)


class TestWrapper:
    def test_echo_wrapper_produces_outputs(self, tmp_path):
        desc = make_desc(tmp_path, ["/bin/echo", "hi"])
        subprocess.run(["/bin/sh", str(desc.wrapper_path)], check=True, timeout=15)
        assert (desc.run_dir / "stdout").read_text() == "hi\n"
        assert (desc.run_dir / "__exitcode__").read_text().strip() == "0"

    def test_failing_command_records_exit_and_complete(self, tmp_path):
        desc = make_desc(tmp_path, ["/bin/false"])
        result = subprocess.run(["/bin/sh", str(desc.wrapper_path)], timeout=15)
        assert result.returncode == 1
        assert (desc.run_dir / "__exitcode__").read_text().strip() == "1"
        kinds = [parse_spool_line(l)[1]
                 for l in (desc.run_dir / "__events__").read_text().splitlines()]
        assert "complete" in kinds

    def test_event_order_in_spool(self, tmp_path):
        desc = make_desc(tmp_path, ["/bin/echo", "x"])
        subprocess.run(["/bin/sh", str(desc.wrapper_path)], check=True, timeout=15)
        kinds = [parse_spool_line(l)[1]
                 for l in (desc.run_dir / "__events__").read_text().splitlines()]
        assert kinds.index("started") < kinds.index("heartbeat")
        assert kinds.index("heartbeat") < kinds.index("complete")
        assert "output_line" in kinds

    def test_environment_exported(self, tmp_path):
        desc = make_desc(tmp_path, ["/bin/sh", "-c", "echo $TY_TEST_VALUE"],
                         env={"TY_TEST_VALUE": "it works"})
        subprocess.run(["/bin/sh", str(desc.wrapper_path)], check=True, timeout=15)
        assert (desc.run_dir / "stdout").read_text() == "it works\n"

    def test_empty_env_no_exports(self, tmp_path):
        desc = make_desc(tmp_path, ["/bin/echo", "y"])
        text = Path(desc.wrapper_path).read_text()
        assert "export" not in text

    def test_missing_run_dir_rejected(self, tmp_path):
        from taskyard.errors import WorkspaceMissing

        configured = ConfiguredApplication(command_line=["/bin/echo"])
        with pytest.raises(WorkspaceMissing):
            generate_wrapper(configured, "9", SensorConfig(),
                             tmp_path / "does-not-exist")


class TestLocalBackend:
    def test_submit_poll_fetch(self, tmp_path):
        backend = LocalBackend()
        desc = make_desc(tmp_path, ["/bin/echo", "hi"])
        handle = backend.submit(desc)
        assert handle.backend_id.isdigit()
        items = [PollItem(handle, desc.run_dir)]
        reports = poll_until(backend, items, all_terminal)
        assert reports[0].mapped_event is TransitionEvent.BACKEND_DONE_OK
        assert reports[0].exit_code == 0
        dest = tmp_path / "out"
        result = backend.fetch_output(handle, dest, [])
        assert sorted(result.retrieved) == ["__exitcode__", "stderr", "stdout"]
        assert (dest / "stdout").read_text() == "hi\n"

    def test_kill_running_job(self, tmp_path):
        backend = LocalBackend()
        desc = make_desc(tmp_path, ["/bin/sleep", "30"])
        handle = backend.submit(desc)
        items = [PollItem(handle, desc.run_dir)]
        poll_until(backend, items,
                   lambda rs: rs[0].raw_status == "running", timeout=5)
        backend.kill(handle)
        reports = poll_until(backend, items,
                             lambda rs: rs[0].raw_status == "killed", timeout=5)
        assert reports[0].mapped_event is None  # no further transitions

    def test_kill_twice_is_noop(self, tmp_path):
        backend = LocalBackend()
        desc = make_desc(tmp_path, ["/bin/echo", "done"])
        handle = backend.submit(desc)
        poll_until(backend, [PollItem(handle, desc.run_dir)], all_terminal)
        with pytest.raises(AlreadyFinished):
            backend.kill(handle)

    def test_wrapper_must_exist(self, tmp_path):
        backend = LocalBackend()
        desc = make_desc(tmp_path, ["/bin/echo"])
        Path(desc.wrapper_path).unlink()
        with pytest.raises(SubmitFailed):
            backend.submit(desc)

    def test_bulk_fallback_counts_individual_submits(self, tmp_path):
        backend = LocalBackend()
        descs = [make_desc(tmp_path, ["/bin/echo", str(i)], fqid=f"f{i}")
                 for i in range(5)]
        handles = backend.bulk_submit(descs)
        assert len(handles) == 5
        assert backend.counters["submit"] == 5
        assert backend.counters["bulk_submit"] == 0

    def test_bulk_empty_list(self):
        backend = LocalBackend()
        assert backend.bulk_submit([]) == []
        assert backend.counters["submit"] == 0
        assert backend.counters["bulk_submit"] == 0


class TestBatchSim:
    def config(self, slots=2, walltime=3600, tick_ms=50):
        return BatchSimConfig(
            queues={"default": QueueConfig(slots=slots, max_walltime_s=walltime),
                    "longq": QueueConfig(slots=1, max_walltime_s=walltime)},
            default_queue="default",
            tick_interval_ms=tick_ms,
        )

    def test_default_queue_used_when_unset(self, tmp_path):
        backend = BatchSimBackend(self.config())
        handle = backend.submit(make_desc(tmp_path, ["/bin/echo", "q"]))
        assert handle.actual_queue == "default"

    def test_unknown_queue_rejected(self, tmp_path):
        backend = BatchSimBackend(self.config())
        desc = make_desc(tmp_path, ["/bin/echo"], hints={"queue": "nope"})
        with pytest.raises(QueueUnknown):
            backend.submit(desc)

    def test_fifo_slot_limit(self, tmp_path):
        backend = BatchSimBackend(self.config(slots=2))
        descs = [make_desc(tmp_path, ["/bin/sleep", "5"], fqid=f"b{i}")
                 for i in range(3)]
        for desc in descs:
            backend.submit(desc)
        backend.sim_tick()
        counts = backend.queue_counts()["default"]
        assert counts["running"] == 2
        assert counts["queued"] == 1

    def test_conservation_across_ticks(self, tmp_path):
        backend = BatchSimBackend(self.config(slots=2, tick_ms=30))
        descs = [make_desc(tmp_path, ["/bin/echo", str(i)], fqid=f"c{i}")
                 for i in range(5)]
        handles = [backend.submit(d) for d in descs]
        items = [PollItem(h, d.run_dir) for h, d in zip(handles, descs)]
        deadline = time.monotonic() + 20
        while True:
            backend.sim_tick()
            counts = backend.queue_counts()["default"]
            assert counts["running"] <= 2
            assert counts["queued"] + counts["running"] + counts["finished"] == 5
            if counts["finished"] == 5:
                break
            assert time.monotonic() < deadline
            time.sleep(0.02)
        reports = backend.poll(items)
        assert all(r.mapped_event is TransitionEvent.BACKEND_DONE_OK
                   for r in reports)

    def test_walltime_enforced(self, tmp_path):
        config = BatchSimConfig(
            queues={"default": QueueConfig(slots=1, max_walltime_s=1)},
            default_queue="default", tick_interval_ms=200,
        )
        backend = BatchSimBackend(config)
        desc = make_desc(tmp_path, ["/bin/sleep", "10"])
        handle = backend.submit(desc)
        backend.sim_tick()  # starts the job at sim time 0.2
        for _ in range(6):  # advance past 1 s of simulated walltime
            backend.sim_tick()
        report = backend.poll([PollItem(handle, desc.run_dir)])[0]
        assert report.raw_status == "walltime exceeded"
        assert report.mapped_event is TransitionEvent.BACKEND_DONE_ERR

    def test_kill_queued_job_never_runs(self, tmp_path):
        backend = BatchSimBackend(self.config(slots=1))
        first = make_desc(tmp_path, ["/bin/sleep", "5"], fqid="k0")
        second = make_desc(tmp_path, ["/bin/echo", "never"], fqid="k1")
        backend.submit(first)
        handle = backend.submit(second)
        backend.sim_tick()  # first occupies the only slot
        backend.kill(handle)
        report = backend.poll([PollItem(handle, second.run_dir)])[0]
        assert report.raw_status == "killed"
        assert not (second.run_dir / "stdout").exists()

    def test_empty_tick(self):
        backend = BatchSimBackend(self.config())
        assert backend.sim_tick() == []

    def test_default_queue_must_exist(self):
        with pytest.raises(QueueUnknown):
            BatchSimConfig(queues={"a": QueueConfig()}, default_queue="b")


class TestRemoteShell:
    def test_loopback_roundtrip(self, tmp_path):
        backend = RemoteShellBackend(
            RemoteShellConfig(remote_root=tmp_path / "remote"))
        desc = make_desc(tmp_path, ["/bin/echo", "remote hello"], fqid="7")
        handle = backend.submit(desc)
        reports = poll_until(backend, [PollItem(handle, desc.run_dir)],
                             all_terminal)
        assert reports[0].mapped_event is TransitionEvent.BACKEND_DONE_OK
        dest = tmp_path / "fetched"
        backend.fetch_output(handle, dest, [])
        assert (dest / "stdout").read_text() == "remote hello\n"
        # ran in the remote workdir, not the workspace run dir
        assert (tmp_path / "remote" / "7" / "stdout").exists()

    def test_bad_launcher_is_transport_error(self, tmp_path):
        from taskyard.errors import TransportError

        backend = RemoteShellBackend(RemoteShellConfig(
            launcher="/no/such/launcher {wrapper}",
            remote_root=tmp_path / "remote"))
        with pytest.raises(TransportError):
            backend.submit(make_desc(tmp_path, ["/bin/echo"]))


class TestMockGrid:
    def config(self, **kw):
        kw.setdefault("spool_root", kw.pop("tmp", None))
        return MockGridConfig(**kw)

    def test_certain_failure(self, tmp_path):
        backend = MockGridBackend(MockGridConfig(
            failure_rate=1.0, spool_root=tmp_path / "spool"))
        desc = make_desc(tmp_path, ["/bin/echo", "never"])
        handle = backend.submit(desc)
        report = backend.poll([PollItem(handle, desc.run_dir)])[0]
        assert report.raw_status == "aborted"
        assert report.mapped_event is TransitionEvent.BACKEND_DONE_ERR

    def test_bulk_counts_one_collection_call(self, tmp_path):
        backend = MockGridBackend(MockGridConfig(spool_root=tmp_path / "spool"))
        descs = [make_desc(tmp_path, ["/bin/echo", str(i)], fqid=f"g{i}")
                 for i in range(10)]
        handles = backend.bulk_submit(descs)
        assert len(handles) == 10
        assert backend.counters["bulk_submit"] == 1
        assert backend.counters["submit"] == 0

    def test_latency_delays_start(self, tmp_path):
        backend = MockGridBackend(MockGridConfig(
            submit_latency=LatencySpec.parse("fixed:300"),
            spool_root=tmp_path / "spool"))
        desc = make_desc(tmp_path, ["/bin/echo", "later"])
        handle = backend.submit(desc)
        report = backend.poll([PollItem(handle, desc.run_dir)])[0]
        assert report.raw_status == "scheduled"
        poll_until(backend, [PollItem(handle, desc.run_dir)], all_terminal)

    def test_unknown_handle_reports_lost(self, tmp_path):
        backend = MockGridBackend(MockGridConfig(spool_root=tmp_path / "spool"))
        desc = make_desc(tmp_path, ["/bin/echo"])
        handle = backend.submit(desc)
        backend._state.clear()  # simulate state wipe
        report = backend.poll([PollItem(handle, desc.run_dir)])[0]
        assert report.raw_status == "lost"
        assert report.mapped_event is TransitionEvent.BACKEND_DONE_ERR

    def test_seeded_failure_fraction(self, tmp_path):
        # small-N version of the acceptance statistic
        backend = MockGridBackend(MockGridConfig(
            failure_rate=0.5, seed=7, spool_root=tmp_path / "spool"))
        desc = make_desc(tmp_path, ["/bin/echo"])
        handles = [backend._register(desc) for _ in range(200)]
        destined = sum(backend.destined_to_fail(h) for h in handles)
        assert 72 <= destined <= 128  # 4 sigma around 100

    def test_latency_spec_parsing(self):
        fixed = LatencySpec.parse("fixed:250")
        assert fixed.kind == "fixed" and fixed.value_ms == 250
        uniform = LatencySpec.parse("uniform:10,20")
        assert uniform.kind == "uniform" and (uniform.lo_ms, uniform.hi_ms) == (10, 20)
        from taskyard.errors import ConfigError

        with pytest.raises(ConfigError):
            LatencySpec.parse("gaussian:5")


class TestPollPurity:
    def test_poll_never_mutates_the_job_record(self, session):
        from taskyard.persistence.records import record_bytes, record_document

        job = make_echo_job(session, args=["purity"])
        session.submit(job.id)
        run_to_completion(session, job.id)
        before = record_bytes(record_document(job))
        backend = session.backends["Local"]
        from taskyard.backends import PollItem

        for _ in range(3):
            backend.poll([PollItem(job.backend_handle,
                                   session.workspace.run_dir(job))])
        assert record_bytes(record_document(session.get_job(job.id))) == before


class TestCommandLogging:
    def test_executed_commands_logged_verbatim(self, tmp_path, caplog):
        import logging

        backend = LocalBackend()
        desc = make_desc(tmp_path, ["/bin/echo", "logged"])
        with caplog.at_level(logging.INFO, logger="taskyard.backends.commands"):
            handle = backend.submit(desc)
        poll_until(backend, [PollItem(handle, desc.run_dir)], all_terminal)
        assert any("wrapper.sh" in record.getMessage()
                   for record in caplog.records)


class TestFetchPatterns:
    def test_patterns_fetch_multiple_files(self, tmp_path):
        backend = LocalBackend()
        desc = make_desc(
            tmp_path,
            ["/bin/sh", "-c", "echo 1 > a.dat; echo 2 > b.dat"],
            outputs=["*.dat"],
        )
        handle = backend.submit(desc)
        poll_until(backend, [PollItem(handle, desc.run_dir)], all_terminal)
        dest = tmp_path / "out"
        result = backend.fetch_output(handle, dest, ["*.dat"])
        assert {"a.dat", "b.dat"} <= set(result.retrieved)
        assert result.missing == []

    def test_missing_pattern_reported_others_retrieved(self, tmp_path):
        backend = LocalBackend()
        desc = make_desc(tmp_path, ["/bin/echo", "only-stdout"])
        handle = backend.submit(desc)
        poll_until(backend, [PollItem(handle, desc.run_dir)], all_terminal)
        result = backend.fetch_output(handle, tmp_path / "out", ["missing.txt"])
        assert "missing.txt" in result.missing
        assert "stdout" in result.retrieved
