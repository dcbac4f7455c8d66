"""Robot: a configurable periodic pipeline of actions for repetitive
use-cases and end-to-end exercising of the whole system.

Built-in actions: SubmitSaved, WaitComplete, ExtractXML, RenderReport,
EmailStub.  Custom actions implement ``run(context) -> dict`` and register
through :func:`register_action_type`.
"""

from __future__ import annotations

import html
import logging
import threading
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from .core import JobStatus
from .errors import ActionFailed, ConfigError

logger = logging.getLogger(__name__)


class RobotContext:
    def __init__(self, session, artifacts_dir: Path, run_id: int):
        self.session = session
        self.artifacts_dir = artifacts_dir
        self.run_id = run_id
        self.iteration = 0
        self.tracked_ids: list[int] = []
        self.last_report_path: Optional[Path] = None
        self.last_report_text: str = ""
        self.artifacts: list[str] = []

    def tracked_jobs(self):
        if self.tracked_ids:
            return [self.session.get_job(i) for i in self.tracked_ids]
        return self.session.repository.all_jobs()


def job_summary_stats(jobs) -> dict:
    completed = [j for j in jobs if j.status is JobStatus.COMPLETED]
    failed = [j for j in jobs if j.status is JobStatus.FAILED]
    durations = [
        (j.finished_at - j.submitted_at).total_seconds()
        for j in completed
        if j.finished_at and j.submitted_at
    ]
    stats = {
        "total": len(jobs),
        "completed": len(completed),
        "failed": len(failed),
        "killed": sum(1 for j in jobs if j.status is JobStatus.KILLED),
        "pending": sum(1 for j in jobs if not j.status.is_terminal()),
        "success_rate": (len(completed) / len(jobs)) if jobs else 0.0,
    }
    if durations:
        stats["time_to_result_s"] = {
            "mean": sum(durations) / len(durations),
            "min": min(durations),
            "max": max(durations),
        }
    return stats


# --------------------------------------------------------------------------
# Actions
# --------------------------------------------------------------------------

class SubmitSaved:
    """Submit jobs instantiated from a template, or saved jobs by selection."""

    name = "SubmitSaved"

    def __init__(self, template_id=None, count: int = 1, select: Optional[dict] = None,
                 on_error: str = "abort"):
        if template_id is None and select is None:
            raise ConfigError("SubmitSaved needs template_id or select")
        self.template_id = template_id
        self.count = count
        self.select = select
        self.on_error = on_error

    def run(self, context: RobotContext) -> dict:
        session = context.session
        submitted = []
        if self.template_id is not None:
            for _ in range(self.count):
                job = session.instantiate_template(self.template_id)
                session.submit(job.id)
                submitted.append(job.id)
        else:
            for job in session.select(**self.select):
                try:
                    session.submit(job.id)
                    submitted.append(job.id)
                except Exception as exc:
                    logger.warning("SubmitSaved: job %s skipped: %s", job.id, exc)
        context.tracked_ids.extend(submitted)
        return {"submitted": submitted}


class WaitComplete:
    """Poll the repository until every tracked job is terminal."""

    name = "WaitComplete"

    def __init__(self, timeout_s: float = 60.0, poll_s: float = 0.1,
                 on_error: str = "continue"):
        self.timeout_s = timeout_s
        self.poll_s = poll_s
        self.on_error = on_error

    def run(self, context: RobotContext) -> dict:
        session = context.session
        deadline = time.monotonic() + self.timeout_s
        while True:
            if not session.monitor.running:
                session.monitor.pump_once()
            pending = [
                j.fqid for j in context.tracked_jobs()
                if not j.status.is_terminal()
            ]
            if not pending:
                return {"waited_for": len(context.tracked_ids)}
            if time.monotonic() > deadline:
                raise ActionFailed(self.name,
                                   f"timeout after {self.timeout_s}s; "
                                   f"still pending: {pending}")
            time.sleep(self.poll_s)


class ExtractXML:
    """Write one XML element per tracked job with identity, status and timing."""

    name = "ExtractXML"

    def __init__(self, path=None, on_error: str = "abort"):
        self.path = path
        self.on_error = on_error

    def run(self, context: RobotContext) -> dict:
        jobs = context.tracked_jobs()
        root = ET.Element("jobs", {
            "generated": datetime.now(timezone.utc).isoformat(),
            "run": str(context.run_id),
            "count": str(len(jobs)),
        })
        for job in jobs:
            attrs = {
                "id": str(job.id),
                "name": job.name,
                "status": job.status.value,
                "application": job.application.type_name,
                "backend": job.backend.type_name,
            }
            if job.submitted_at:
                attrs["submitted_at"] = job.submitted_at.isoformat()
            if job.finished_at:
                attrs["finished_at"] = job.finished_at.isoformat()
            if job.submitted_at and job.finished_at:
                attrs["duration_s"] = "%.3f" % (
                    (job.finished_at - job.submitted_at).total_seconds()
                )
            ET.SubElement(root, "job", attrs)
        if self.path:
            path = Path(self.path)
        else:
            path = context.artifacts_dir / (
                f"jobs-{context.iteration}-{int(time.time() * 1000)}.xml"
            )
        path.parent.mkdir(parents=True, exist_ok=True)
        ET.ElementTree(root).write(path, encoding="unicode", xml_declaration=True)
        with open(path, "a") as fh:
            fh.write("\n")
        context.artifacts.append(str(path))
        return {"path": str(path), "count": len(jobs)}


class RenderReport:
    """Summarize success rate and time-to-result as text or HTML."""

    name = "RenderReport"

    def __init__(self, format: str = "text", path=None, on_error: str = "abort"):
        if format not in ("text", "html"):
            raise ConfigError(f"RenderReport format must be text or html, got {format!r}")
        self.format = format
        self.path = path
        self.on_error = on_error

    def run(self, context: RobotContext) -> dict:
        jobs = context.tracked_jobs()
        stats = job_summary_stats(jobs)
        if self.format == "text":
            text = self._render_text(jobs, stats, context)
            suffix = "txt"
        else:
            text = self._render_html(jobs, stats, context)
            suffix = "html"
        if self.path:
            path = Path(self.path)
        else:
            path = context.artifacts_dir / f"report-{context.iteration}.{suffix}"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        context.last_report_path = path
        context.last_report_text = text
        context.artifacts.append(str(path))
        return {"path": str(path), **stats}

    @staticmethod
    def _job_line(job) -> str:
        duration = ""
        if job.submitted_at and job.finished_at:
            duration = "%.2fs" % (job.finished_at - job.submitted_at).total_seconds()
        return (f"{job.id:>6}  {job.name or '-':<20} {job.backend.type_name:<12} "
                f"{job.status.value:<10} {duration}")

    def _render_text(self, jobs, stats, context) -> str:
        lines = [
            f"robot run {context.run_id} iteration {context.iteration}",
            f"generated: {datetime.now(timezone.utc).isoformat()}",
            "",
            f"jobs: {stats['completed']}/{stats['total']} completed, "
            f"{stats['failed']} failed, {stats['killed']} killed",
            f"success rate: {stats['success_rate'] * 100.0:.1f}%",
        ]
        timing = stats.get("time_to_result_s")
        if timing:
            lines.append(
                "time to result: mean %.2fs  min %.2fs  max %.2fs"
                % (timing["mean"], timing["min"], timing["max"])
            )
        lines.append("")
        lines.extend(self._job_line(job) for job in jobs)
        return "\n".join(lines) + "\n"

    def _render_html(self, jobs, stats, context) -> str:
        rows = "\n".join(
            "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>".format(
                job.id, html.escape(job.name or "-"),
                html.escape(job.backend.type_name), job.status.value,
            )
            for job in jobs
        )
        timing = stats.get("time_to_result_s") or {}
        return f"""<!doctype html>
<html><head><title>robot run {context.run_id}</title></head>
<body>
<h1>robot run {context.run_id} iteration {context.iteration}</h1>
<p>{stats['completed']}/{stats['total']} completed
({stats['success_rate'] * 100.0:.1f}% success),
{stats['failed']} failed, {stats['killed']} killed.</p>
<p>time to result: mean {timing.get('mean', 0):.2f}s,
min {timing.get('min', 0):.2f}s, max {timing.get('max', 0):.2f}s</p>
<table border="1">
<tr><th>id</th><th>name</th><th>backend</th><th>status</th></tr>
{rows}
</table>
</body></html>
"""


class EmailStub:
    """Drop the last rendered report into an outbox directory, RFC-822 style."""

    name = "EmailStub"

    def __init__(self, to: str = "operators@localhost", subject: Optional[str] = None,
                 on_error: str = "continue"):
        self.to = to
        self.subject = subject
        self.on_error = on_error

    def run(self, context: RobotContext) -> dict:
        outbox = context.artifacts_dir / "outbox"
        outbox.mkdir(parents=True, exist_ok=True)
        body = context.last_report_text or "no report rendered\n"
        subject = self.subject or f"robot run {context.run_id} report"
        message = "\n".join([
            f"From: robot@taskyard.local",
            f"To: {self.to}",
            f"Subject: {subject}",
            f"Date: {datetime.now(timezone.utc).strftime('%a, %d %b %Y %H:%M:%S +0000')}",
            "MIME-Version: 1.0",
            "Content-Type: text/plain; charset=utf-8",
            "",
            body,
        ])
        path = outbox / f"msg-{context.iteration}-{int(time.time() * 1000)}.eml"
        path.write_text(message)
        context.artifacts.append(str(path))
        return {"path": str(path), "to": self.to}


ACTION_TYPES = {
    "SubmitSaved": SubmitSaved,
    "WaitComplete": WaitComplete,
    "ExtractXML": ExtractXML,
    "RenderReport": RenderReport,
    "EmailStub": EmailStub,
}


def register_action_type(name: str, factory):
    if name in ACTION_TYPES:
        raise ConfigError(f"action type {name!r} already registered")
    ACTION_TYPES[name] = factory


# --------------------------------------------------------------------------
# Pipelines
# --------------------------------------------------------------------------

@dataclass
class RobotPipeline:
    actions: list = field(default_factory=list)
    period_s: float = 1.0
    iterations: int = 1

    def __post_init__(self):
        if self.period_s <= 0:
            raise ConfigError("period_s must be > 0")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        for action in self.actions:
            if not callable(getattr(action, "run", None)):
                raise ConfigError(
                    f"action {action!r} does not implement run(context)"
                )

    @classmethod
    def from_document(cls, document: dict) -> "RobotPipeline":
        actions = []
        for spec in document.get("actions", []):
            spec = dict(spec)
            type_name = spec.pop("type", None)
            factory = ACTION_TYPES.get(type_name)
            if factory is None:
                raise ConfigError(f"unknown robot action type {type_name!r}")
            try:
                actions.append(factory(**spec))
            except TypeError as exc:
                raise ConfigError(f"bad parameters for {type_name}: {exc}")
        return cls(
            actions=actions,
            period_s=float(document.get("period_s", 1.0)),
            iterations=int(document.get("iterations", 1)),
        )


def validate_jobs_xml(path) -> dict:
    """Check an extracted XML file against the published element/attribute set."""
    tree = ET.parse(path)
    root = tree.getroot()
    if root.tag != "jobs":
        raise ValueError(f"root element must be <jobs>, got <{root.tag}>")
    for required in ("generated", "run", "count"):
        if required not in root.attrib:
            raise ValueError(f"<jobs> missing attribute {required!r}")
    count = int(root.attrib["count"])
    children = list(root)
    if len(children) != count:
        raise ValueError(f"count attribute {count} != {len(children)} job elements")
    valid_statuses = {s.value for s in JobStatus}
    for element in children:
        if element.tag != "job":
            raise ValueError(f"unexpected element <{element.tag}>")
        for required in ("id", "name", "status", "application", "backend"):
            if required not in element.attrib:
                raise ValueError(f"<job> missing attribute {required!r}")
        int(element.attrib["id"])
        if element.attrib["status"] not in valid_statuses:
            raise ValueError(f"bad status {element.attrib['status']!r}")
        if "duration_s" in element.attrib:
            float(element.attrib["duration_s"])
    return {"count": count}


class RobotRunner:
    """Executes pipelines, inline or on a background thread, and keeps the
    run reports for the HTTP layer."""

    def __init__(self, session):
        self.session = session
        self._runs: dict[int, dict] = {}
        self._lock = threading.Lock()
        self._next_run = 0

    def _new_run(self) -> tuple[int, Path]:
        with self._lock:
            self._next_run += 1
            run_id = self._next_run
        artifacts = self.session.repository.root / "robot" / f"run-{run_id}"
        artifacts.mkdir(parents=True, exist_ok=True)
        report = {
            "run_id": run_id,
            "status": "running",
            "started_at": datetime.now(timezone.utc).isoformat(),
            "iterations": [],
            "artifacts_dir": str(artifacts),
        }
        with self._lock:
            self._runs[run_id] = report
        return run_id, artifacts

    def run_pipeline(self, pipeline: RobotPipeline) -> dict:
        """Execute a pipeline to completion on the calling thread."""
        run_id, artifacts = self._new_run()
        report = self._runs[run_id]
        context = RobotContext(self.session, artifacts, run_id)
        self._execute_into(report, pipeline, context)
        return report

    def start_run(self, pipeline: RobotPipeline) -> int:
        """Run a pipeline on a background thread; returns the run id."""
        run_id, artifacts = self._new_run()
        report = self._runs[run_id]

        def body():
            context = RobotContext(self.session, artifacts, run_id)
            try:
                self._execute_into(report, pipeline, context)
            except Exception as exc:
                report["status"] = "aborted"
                report["error"] = str(exc)
                logger.exception("robot run %d crashed", run_id)

        thread = threading.Thread(target=body, name=f"taskyard-robot-{run_id}",
                                  daemon=True)
        thread.start()
        return run_id

    def _execute_into(self, report, pipeline, context):
        aborted = False
        for iteration in range(pipeline.iterations):
            context.iteration = iteration
            iteration_report = {"iteration": iteration, "actions": []}
            report["iterations"].append(iteration_report)
            for action in pipeline.actions:
                entry = {"action": action.name, "ok": True}
                try:
                    entry["result"] = action.run(context)
                except ActionFailed as exc:
                    entry["ok"] = False
                    entry["error"] = str(exc)
                    logger.warning("robot run %d: %s", context.run_id, exc)
                    if getattr(action, "on_error", "abort") == "abort":
                        aborted = True
                except Exception as exc:
                    entry["ok"] = False
                    entry["error"] = f"{type(exc).__name__}: {exc}"
                    logger.exception("robot run %d: action %s crashed",
                                     context.run_id, action.name)
                    aborted = True
                iteration_report["actions"].append(entry)
                if aborted:
                    break
            if aborted:
                break
            if iteration + 1 < pipeline.iterations:
                time.sleep(pipeline.period_s)
        report["status"] = "aborted" if aborted else "completed"
        report["finished_at"] = datetime.now(timezone.utc).isoformat()
        report["artifacts"] = list(context.artifacts)
        report["summary"] = job_summary_stats(context.tracked_jobs())

    def get_run(self, run_id: int) -> dict:
        with self._lock:
            if run_id not in self._runs:
                raise UnknownRun(run_id)
            return self._runs[run_id]

    def list_runs(self) -> list[dict]:
        with self._lock:
            return [self._runs[k] for k in sorted(self._runs)]


class UnknownRun(KeyError):
    pass
