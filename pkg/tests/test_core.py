import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskyard import core
from taskyard.core import (
    Job,
    JobStatus,
    TransitionEvent,
    derive_master_status,
    transition,
)
from taskyard.errors import (
    EmptySubjobs,
    IllegalTransition,
    JobNotModifiable,
    UnknownPlugin,
)
from taskyard.persistence.records import record_bytes, record_document

from .conftest import make_echo_job, run_to_completion

STATUSES = list(JobStatus)
EVENTS = list(TransitionEvent)

# Hand-enumerated oracle: every one of the 6x7 (status, event) pairs.
# None marks an illegal combination.
ORACLE = {
    ("new", "submit_requested"): "submitted",
    ("new", "backend_accepted"): "submitted",
    ("new", "backend_running"): None,
    ("new", "backend_done_ok"): None,
    ("new", "backend_done_err"): None,
    ("new", "kill_requested"): "killed",
    ("new", "resubmit_requested"): None,
    ("submitted", "submit_requested"): None,
    ("submitted", "backend_accepted"): None,
    ("submitted", "backend_running"): "running",
    ("submitted", "backend_done_ok"): "completed",
    ("submitted", "backend_done_err"): "failed",
    ("submitted", "kill_requested"): "killed",
    ("submitted", "resubmit_requested"): None,
    ("running", "submit_requested"): None,
    ("running", "backend_accepted"): None,
    ("running", "backend_running"): None,
    ("running", "backend_done_ok"): "completed",
    ("running", "backend_done_err"): "failed",
    ("running", "kill_requested"): "killed",
    ("running", "resubmit_requested"): None,
    ("completed", "submit_requested"): None,
    ("completed", "backend_accepted"): None,
    ("completed", "backend_running"): None,
    ("completed", "backend_done_ok"): None,
    ("completed", "backend_done_err"): None,
    ("completed", "kill_requested"): None,
    ("completed", "resubmit_requested"): None,
    ("failed", "submit_requested"): None,
    ("failed", "backend_accepted"): None,
    ("failed", "backend_running"): None,
    ("failed", "backend_done_ok"): None,
    ("failed", "backend_done_err"): None,
    ("failed", "kill_requested"): None,
    ("failed", "resubmit_requested"): "submitted",
    ("killed", "submit_requested"): None,
    ("killed", "backend_accepted"): None,
    ("killed", "backend_running"): None,
    ("killed", "backend_done_ok"): None,
    ("killed", "backend_done_err"): None,
    ("killed", "kill_requested"): None,
    ("killed", "resubmit_requested"): "submitted",
}


def make_bare_job(registry, status=JobStatus.NEW) -> Job:
    job = Job(
        id=0,
        application=registry.create("application", {"type": "Executable"}),
        backend=registry.create("backend", {"type": "Local"}),
    )
    job.status = status
    return job


class TestNewJob:
    def test_default_job(self, session):
        job = make_echo_job(session, name="MyJob")
        assert job.id == 0
        assert job.status is JobStatus.NEW
        assert job.name == "MyJob"

    def test_creation_imposes_no_content_checks(self, session):
        job = session.create_job(
            application={"type": "Executable", "exe": ""},
            backend={"type": "Local"},
        )
        assert job.status is JobStatus.NEW

    def test_monotone_ids(self, session):
        ids = [make_echo_job(session).id for _ in range(3)]
        assert ids == [0, 1, 2]

    def test_unknown_plugin(self, session):
        with pytest.raises(UnknownPlugin):
            session.create_job(application={"type": "NoSuchApp"},
                               backend={"type": "Local"})

    def test_persisted_immediately(self, session):
        job = make_echo_job(session)
        assert session.repository.exists(job.id)


class TestCopyJob:
    def test_copy_with_backend_override(self, session):
        job = make_echo_job(session)
        run_to_completion(session, session.submit(job.id).id)
        copy = session.copy(job.id, backend={"type": "MockGrid"})
        assert copy.status is JobStatus.NEW
        assert copy.backend.type_name == "MockGrid"
        assert copy.backend_handle is None
        assert copy.id != job.id

    def test_identity_copy(self, session):
        job = make_echo_job(session, name="orig",
                            output_sandbox=["*.dat"])
        copy = session.copy(job.id)
        assert copy.name == job.name
        assert copy.application.values == job.application.values
        assert copy.backend.values == job.backend.values
        assert copy.output_sandbox == job.output_sandbox
        assert copy.id != job.id

    def test_copy_of_split_job_has_no_subjobs(self, session):
        job = session.create_job(
            application={"type": "Executable", "exe": "/bin/echo"},
            backend={"type": "Local"},
            splitter={"type": "ArgSplitter",
                      "args": [str(i) for i in range(10)]},
        )
        session.submit(job.id)
        assert len(job.subjobs) == 10
        copy = session.copy(job.id)
        assert copy.subjobs == []

    def test_copy_never_alters_source(self, session):
        job = make_echo_job(session, name="source")
        before = record_bytes(record_document(job))
        copy = session.copy(job.id, name="changed")
        session.submit(copy.id)
        run_to_completion(session, copy.id)
        assert record_bytes(record_document(session.get_job(job.id))) == before


class TestTransitionTable:
    def test_exhaustive_oracle(self, registry):
        checked = 0
        for status in STATUSES:
            for event in EVENTS:
                expected = ORACLE[(status.value, event.value)]
                job = make_bare_job(registry, status)
                if expected is None:
                    with pytest.raises(IllegalTransition):
                        transition(job, event)
                    assert job.status is status  # untouched on failure
                else:
                    assert transition(job, event) is JobStatus(expected)
                checked += 1
        assert checked == 42

    def test_submit_example(self, registry):
        job = make_bare_job(registry)
        transition(job, TransitionEvent.SUBMIT_REQUESTED)
        assert job.status is JobStatus.SUBMITTED

    def test_terminal_kill_rejected(self, registry):
        job = make_bare_job(registry, JobStatus.COMPLETED)
        with pytest.raises(IllegalTransition) as err:
            transition(job, TransitionEvent.KILL_REQUESTED)
        assert err.value.detail["from_status"] == "completed"

    def test_random_legal_sequences(self, registry):
        rng = random.Random(20080801)
        for _ in range(2000):
            job = make_bare_job(registry)
            for _ in range(rng.randint(0, 12)):
                legal = core.legal_events(job.status)
                if not legal:
                    break
                transition(job, rng.choice(legal))
            assert job.status in STATUSES

    @settings(max_examples=200)
    @given(st.lists(st.integers(min_value=0, max_value=6), max_size=15))
    def test_replay_never_corrupts(self, picks):
        job = make_bare_job(_MODULE_REGISTRY)
        for pick in picks:
            legal = core.legal_events(job.status)
            if not legal:
                break
            transition(job, legal[pick % len(legal)])
            assert job.status in STATUSES


def _build_module_registry():
    from taskyard.builtins import build_registry

    return build_registry()


_MODULE_REGISTRY = _build_module_registry()


def oracle_master_status(statuses):
    """Independent aggregation rule used to cross-check the implementation."""
    statuses = [JobStatus(s) for s in statuses]
    if not statuses:
        raise ValueError("empty")
    if any(s in (JobStatus.SUBMITTED, JobStatus.RUNNING) for s in statuses):
        return JobStatus.RUNNING
    if JobStatus.FAILED in statuses:
        return JobStatus.FAILED
    if JobStatus.KILLED in statuses:
        return JobStatus.KILLED
    return JobStatus.COMPLETED


class TestDeriveMasterStatus:
    def test_unanimity(self):
        assert derive_master_status(
            [JobStatus.COMPLETED, JobStatus.COMPLETED]) is JobStatus.COMPLETED

    def test_failed_dominates_completed(self):
        assert derive_master_status(
            [JobStatus.COMPLETED, JobStatus.FAILED]) is JobStatus.FAILED

    def test_activity_dominates_failed(self):
        assert derive_master_status(
            [JobStatus.RUNNING, JobStatus.FAILED]) is JobStatus.RUNNING

    def test_empty_rejected(self):
        with pytest.raises(EmptySubjobs):
            derive_master_status([])

    def test_brute_force_multisets(self):
        import itertools

        for size in (1, 2, 3):
            for combo in itertools.product(STATUSES, repeat=size):
                assert derive_master_status(combo) is oracle_master_status(combo)

    @given(st.lists(st.sampled_from(STATUSES), min_size=1, max_size=8),
           st.randoms())
    def test_permutation_invariance(self, statuses, rnd):
        shuffled = list(statuses)
        rnd.shuffle(shuffled)
        assert derive_master_status(statuses) is derive_master_status(shuffled)


class TestMutationFreeze:
    def test_submitted_job_rejects_mutation(self, session):
        job = make_echo_job(session, args=["sleep-proof"])
        session.submit(job.id)
        record_before = record_bytes(record_document(job))
        with pytest.raises(JobNotModifiable):
            job.set_name("nope")
        from taskyard.plugins import proxy_view

        view = proxy_view(job.application)
        with pytest.raises(JobNotModifiable):
            view.exe = "/bin/true"
        with pytest.raises(JobNotModifiable):
            job.set_input_sandbox(["x"])
        assert record_bytes(record_document(session.get_job(job.id))) == record_before

    def test_new_job_is_modifiable(self, session):
        job = make_echo_job(session)
        job.set_name("renamed")
        assert job.name == "renamed"
