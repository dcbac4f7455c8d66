#!/usr/bin/env python3
"""Regenerate the dashboard test fixtures from a real daemon.

Boots a session with an extra plugin registered (the dashboard must render
it without any code change), runs a few jobs to produce a 50+ event
sequence, and captures /schemas plus before/events/after documents for the
convergence test.

Usage: python3 frontend/scripts/gen_fixtures.py
"""

import json
import sys
import time
from pathlib import Path

from fastapi.testclient import TestClient

from taskyard.backends import SensorConfig
from taskyard.interface.api import create_app
from taskyard.lifecycle import MockCredential
from taskyard.plugins import (
    Access,
    AttributeDescriptor,
    Category,
    PluginSchema,
    SubmissionHandler,
    ValueType,
)
from taskyard.session import Session

FIXTURES = Path(__file__).resolve().parent.parent / "test" / "fixtures"

EXTRA_PLUGIN = PluginSchema(
    plugin_name="ImageScan",
    category=Category.APPLICATION,
    version=1,
    doc="Fixture-only plugin: the dashboard has never heard of it.",
    attributes=[
        AttributeDescriptor("archive", ValueType.PATH, doc="Archive of images to scan."),
        AttributeDescriptor("threshold", ValueType.FLOAT, default=0.5, doc="Detection threshold."),
        AttributeDescriptor("passes", ValueType.INTEGER, default=1, doc="Number of scan passes."),
        AttributeDescriptor("tags", ValueType.STRING_LIST, doc="Classifier tags to apply."),
        AttributeDescriptor("options", ValueType.STRING_MAP, doc="Extra engine options."),
        AttributeDescriptor("gpu", ValueType.BOOLEAN, default=False, doc="Use the GPU pipeline."),
        AttributeDescriptor("engine_id", ValueType.STRING, Access.READ_ONLY, doc="Engine instance id."),
        AttributeDescriptor("scratch_dir", ValueType.PATH, Access.INTERNAL, doc="Engine scratch path."),
    ],
)


def main(out_dir: Path):
    import tempfile

    tmp = Path(tempfile.mkdtemp(prefix="taskyard-fixtures-"))
    session = Session(
        tmp / "repo", tmp / "ws",
        credential=MockCredential(ttl_s=3600, warn_threshold_s=60),
        sensor_config=SensorConfig(heartbeat_interval_s=0.1),
    )
    session.registry.register_plugin(EXTRA_PLUGIN)
    session.registry.register_handler(SubmissionHandler(
        "ImageScan", "Local",
        session.registry.resolve_handler("Executable", "Local").translate))
    app = create_app(session)

    with TestClient(app) as client:
        schemas = client.get("/schemas").json()

        echo = {"application": {"type": "Executable", "exe": "/bin/echo",
                                "args": ["fixture"]},
                "backend": {"type": "Local"}}
        client.post("/jobs", json={**echo, "name": "seed-a"})
        client.post("/jobs", json={**echo, "name": "seed-b"})
        split = {
            "name": "fanout",
            "application": {"type": "Executable", "exe": "/bin/echo"},
            "backend": {"type": "Local"},
            "splitter": {"type": "ArgSplitter",
                         "args": [f"s{i}" for i in range(6)]},
            "merger": {"type": "TextMerger"},
        }
        split_id = client.post("/jobs", json=split).json()["id"]
        before = client.get("/jobs").json()

        # now make things happen: submits, a failure, a late job
        client.post("/jobs/0/submit")
        client.post("/jobs/1/submit")
        client.post(f"/jobs/{split_id}/submit")
        fail_doc = {"application": {"type": "Executable", "exe": "/bin/false"},
                    "backend": {"type": "Local"}, "name": "doomed"}
        fail_id = client.post("/jobs", json=fail_doc).json()["id"]
        client.post(f"/jobs/{fail_id}/submit")
        for job_id in (0, 1, split_id, fail_id):
            session.wait_for(job_id, timeout_s=60)
        session.pump_monitor()
        session.bus.flush()

        events = []
        with client.stream("GET", "/events",
                           params={"since": 0, "follow": "false"}) as stream:
            for line in stream.iter_lines():
                if line:
                    events.append(json.loads(line))
        after = client.get("/jobs").json()
        documents = [client.get(f"/jobs/{row['id']}").json() for row in after]

    session.close()
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "schemas.json").write_text(json.dumps(schemas, indent=2) + "\n")
    (out_dir / "convergence.json").write_text(json.dumps(
        {"before": before, "events": events, "after": after,
         "documents": documents}, indent=2) + "\n")
    print(f"wrote {out_dir}/schemas.json ({sum(len(v) for v in schemas.values())} plugins)")
    print(f"wrote {out_dir}/convergence.json ({len(events)} events)")
    if len(events) < 50:
        print("WARNING: fewer than 50 events captured", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main(FIXTURES))
