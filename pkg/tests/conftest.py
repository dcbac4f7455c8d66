import logging

import pytest

from taskyard.backends import SensorConfig
from taskyard.builtins import build_registry
from taskyard.lifecycle import MockCredential
from taskyard.session import Session

logging.getLogger("taskyard").setLevel(logging.WARNING)


@pytest.fixture
def registry():
    return build_registry()


@pytest.fixture
def session(tmp_path):
    s = Session(
        tmp_path / "repo",
        tmp_path / "ws",
        credential=MockCredential(ttl_s=7200, warn_threshold_s=60),
        sensor_config=SensorConfig(heartbeat_interval_s=0.1),
    )
    yield s
    s.close()


def make_echo_job(session, backend="Local", args=("hi",), name="", **fields):
    return session.create_job(
        application={"type": "Executable", "exe": "/bin/echo", "args": list(args)},
        backend={"type": backend},
        name=name,
        **fields,
    )


def run_to_completion(session, job_id, timeout_s=30.0):
    return session.wait_for(job_id, timeout_s=timeout_s)


@pytest.fixture
def echo_job_factory():
    return make_echo_job
