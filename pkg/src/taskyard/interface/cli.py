"""Command-line interface.

By default commands talk HTTP to a running daemon; ``--embedded`` opens the
repository directly in this process for single-user scripting.  ``--json``
prints exactly the bytes the corresponding HTTP endpoint returns.
"""

from __future__ import annotations

import json
import logging
import sys
import time
from pathlib import Path

import click
import requests

from ..errors import TaskyardError
from .config import ConfigFile, load_config
from .payloads import Operations, canon_json, error_document

DEFAULT_URL = "http://127.0.0.1:8425"


class ApiCallError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.status = status
        self.code = code
        self.message = message


class HttpClient:
    """Talks to the daemon; success payloads are returned as verbatim text."""

    def __init__(self, base_url: str, token: str = ""):
        self.base_url = base_url.rstrip("/")
        self.headers = {"Authorization": f"Bearer {token}"} if token else {}

    def call(self, method: str, path: str, params=None, body=None) -> str:
        try:
            response = requests.request(
                method, self.base_url + path, params=params, json=body,
                headers=self.headers, timeout=60,
            )
        except requests.RequestException as exc:
            raise ApiCallError(0, "ConnectionError",
                               f"cannot reach daemon at {self.base_url}: {exc}")
        if response.status_code >= 400:
            try:
                doc = response.json()
            except ValueError:
                doc = {"code": "HttpError", "message": response.text[:200]}
            raise ApiCallError(response.status_code,
                               doc.get("code", "HttpError"),
                               doc.get("message", ""))
        return response.text

    def stream_events(self, since: int = 0, limit=None):
        params = {"since": since}
        if limit is not None:
            params["limit"] = limit
        response = requests.get(self.base_url + "/events", params=params,
                                headers=self.headers, stream=True, timeout=300)
        response.raise_for_status()
        for line in response.iter_lines():
            if line:
                yield line.decode()


class EmbeddedClient:
    """Runs the verbs directly against a locally opened session."""

    def __init__(self, config: ConfigFile):
        from ..session import Session

        self.config = config
        self.session = Session(config.repository_root, config.workspace_root,
                               **config.session_kwargs())
        self.ops = Operations(self.session)

    def close(self):
        self.session.close()

    def call(self, method: str, path: str, params=None, body=None) -> str:
        payload = self._dispatch(method, path, params or {}, body or {})
        return canon_json(payload)

    def _dispatch(self, method, path, params, body):
        ops = self.ops
        parts = [p for p in path.split("/") if p]
        if parts == ["jobs"]:
            return ops.list_jobs(params) if method == "GET" else ops.create_job(body)
        if len(parts) == 2 and parts[0] == "jobs":
            fqid = parts[1]
            if method == "GET":
                return ops.get_job(fqid)
            if method == "DELETE":
                return ops.remove_job(int(fqid))
        if len(parts) == 3 and parts[0] == "jobs":
            job_id, verb = parts[1], parts[2]
            if verb == "submit":
                job = ops.submit_job(int(job_id))
                self.session.pump_monitor()  # give the job a first nudge
                return job
            if verb == "kill":
                return ops.kill_job(int(job_id))
            if verb == "resubmit":
                return ops.resubmit_job(int(job_id))
            if verb == "copy":
                return ops.copy_job(int(job_id), body)
            if verb == "peek":
                return ops.peek_job(job_id, params.get("file", "stdout"),
                                    params.get("lines"))
            if verb == "subjobs":
                return ops.subjobs(int(job_id))
            if verb == "merge":
                return ops.merge_job(int(job_id), body)
        if parts == ["schemas"]:
            return ops.schemas()
        if parts == ["templates"]:
            return (ops.list_templates() if method == "GET"
                    else ops.save_template(body))
        if len(parts) == 3 and parts[0] == "templates" and parts[2] == "instantiate":
            return ops.instantiate_template(int(parts[1]), body)
        if parts == ["jobtree"]:
            return (ops.jobtree_get(params.get("path", "/")) if method == "GET"
                    else ops.jobtree_post(body))
        if parts == ["credential"]:
            return ops.credential()
        if parts == ["credential", "renew"]:
            return ops.credential_renew(body)
        if parts == ["credential", "destroy"]:
            return ops.credential_destroy()
        if parts == ["robot", "runs"]:
            return ops.robot_runs()
        if parts == ["robot", "run"]:
            return ops.robot_run(body, wait=True)
        if parts == ["health"]:
            return {"status": "ok", "jobs": len(self.session.repository),
                    "monitor_running": self.session.monitor.running}
        raise ApiCallError(404, "NoSuchRoute", f"{method} {path}")


class CliState:
    def __init__(self, url, token, embedded, config_paths):
        self.url = url or DEFAULT_URL
        self.token = token
        self.embedded = embedded
        self.config_paths = list(config_paths)
        self._client = None

    def load_cfg(self, overrides=None) -> ConfigFile:
        return load_config(*self.config_paths, overrides=overrides)

    @property
    def client(self):
        if self._client is None:
            if self.embedded:
                self._client = EmbeddedClient(self.load_cfg())
            else:
                self._client = HttpClient(self.url, self.token)
        return self._client

    def finish(self):
        if isinstance(self._client, EmbeddedClient):
            self._client.close()


def run_state(ctx) -> CliState:
    return ctx.obj


def output(state, text: str, as_json: bool, render=None):
    if as_json:
        sys.stdout.write(text)
        return
    payload = json.loads(text)
    if render is not None:
        render(payload)
    else:
        sys.stdout.write(text)


def fail(exc):
    if isinstance(exc, ApiCallError):
        click.echo(f"error: {exc.code}: {exc.message}", err=True)
    elif isinstance(exc, TaskyardError):
        doc = error_document(exc)
        click.echo(f"error: {doc['code']}: {doc['message']}", err=True)
    else:
        click.echo(f"error: {exc}", err=True)
    sys.exit(1)


def guarded(fn):
    """Run a command body, mapping API errors to exit code 1."""
    import functools

    @functools.wraps(fn)
    def inner(ctx, *args, **kwargs):
        state = run_state(ctx)
        try:
            return fn(ctx, *args, **kwargs)
        except (ApiCallError, TaskyardError) as exc:
            fail(exc)
        finally:
            state.finish()

    return inner


def _parse_opt_value(raw: str):
    try:
        return json.loads(raw)
    except ValueError:
        return raw


def _kv_pairs(entries) -> dict:
    result = {}
    for entry in entries:
        if "=" not in entry:
            raise click.UsageError(f"expected key=value, got {entry!r}")
        key, value = entry.split("=", 1)
        result[key] = _parse_opt_value(value)
    return result


# --------------------------------------------------------------------------
# group
# --------------------------------------------------------------------------

@click.group()
@click.option("--url", envvar="TASKYARD_URL", default=None,
              help="Daemon base URL (default http://127.0.0.1:8425).")
@click.option("--token", envvar="TASKYARD_TOKEN", default="",
              help="Bearer token when the daemon requires one.")
@click.option("--config", "config_paths", multiple=True,
              type=click.Path(exists=True),
              help="Config file(s), least to most specific; repeatable.")
@click.option("--embedded", is_flag=True,
              help="Open the repository directly instead of talking HTTP.")
@click.pass_context
def main(ctx, url, token, config_paths, embedded):
    """Job definition, submission, bookkeeping and monitoring."""
    ctx.obj = CliState(url, token, embedded, config_paths)


# -- job ----------------------------------------------------------------------

@main.group()
def job():
    """Operate on a single job."""


def _render_job(doc):
    handle = doc.get("backend_handle") or {}
    rows = [
        ("id", doc["fqid"]),
        ("name", doc["name"] or "-"),
        ("status", doc["status"]),
        ("application", doc["application"]["type"]),
        ("backend", doc["backend"]["type"]),
        ("backend id", handle.get("backend_id", "-")),
        ("raw status", handle.get("raw_status", "-")),
        ("submitted", doc.get("submitted_at") or "-"),
        ("finished", doc.get("finished_at") or "-"),
        ("subjobs", str(len(doc.get("subjobs", [])))),
    ]
    for key, value in rows:
        click.echo(f"{key:>12}: {value}")


@job.command("create")
@click.option("--app", "app_type", default="Executable", show_default=True)
@click.option("--exe", default=None, help="Executable path (Executable app).")
@click.option("--arg", "args", multiple=True, help="Executable argument; repeatable.")
@click.option("--env", "envs", multiple=True, help="KEY=VALUE environment entry.")
@click.option("--aopt", "aopts", multiple=True, help="Application attribute key=value.")
@click.option("--backend", "backend_type", default="Local", show_default=True)
@click.option("--bopt", "bopts", multiple=True, help="Backend attribute key=value.")
@click.option("--name", default="")
@click.option("--input-sandbox", "input_sandbox", multiple=True)
@click.option("--output-sandbox", "output_sandbox", multiple=True)
@click.option("--splitter", default=None)
@click.option("--split-arg", "split_args", multiple=True,
              help="ArgSplitter entry (one subjob); repeatable.")
@click.option("--sopt", "sopts", multiple=True, help="Splitter attribute key=value.")
@click.option("--merger", default=None)
@click.option("--mopt", "mopts", multiple=True, help="Merger attribute key=value.")
@click.option("--input-file", "input_files", multiple=True,
              help="Dataset file (FileListDataset); repeatable.")
@click.option("--doc", "raw_doc", default=None,
              help="Full job document as JSON (or @file); overrides other flags.")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def job_create(ctx, app_type, exe, args, envs, aopts, backend_type, bopts, name,
               input_sandbox, output_sandbox, splitter, split_args, sopts,
               merger, mopts, input_files, raw_doc, as_json):
    """Create a job (status new) from components."""
    state = run_state(ctx)
    if raw_doc:
        if raw_doc.startswith("@"):
            raw_doc = Path(raw_doc[1:]).read_text()
        body = json.loads(raw_doc)
    else:
        application = {"type": app_type, **_kv_pairs(aopts)}
        if exe is not None:
            application["exe"] = exe
        if args:
            application["args"] = list(args)
        if envs:
            application["env"] = {k: str(v) for k, v in _kv_pairs(envs).items()}
        body = {
            "name": name,
            "application": application,
            "backend": {"type": backend_type, **_kv_pairs(bopts)},
        }
        if input_sandbox:
            body["input_sandbox"] = list(input_sandbox)
        if output_sandbox:
            body["output_sandbox"] = list(output_sandbox)
        if splitter or split_args:
            body["splitter"] = {"type": splitter or "ArgSplitter", **_kv_pairs(sopts)}
            if split_args:
                body["splitter"]["args"] = list(split_args)
        if merger:
            body["merger"] = {"type": merger, **_kv_pairs(mopts)}
        if input_files:
            body["inputdata"] = {"type": "FileListDataset",
                                 "files": list(input_files)}
    text = state.client.call("POST", "/jobs", body=body)
    output(state, text, as_json,
           lambda doc: click.echo(f"created job {doc['id']}"))


@job.command("show")
@click.argument("fqid")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def job_show(ctx, fqid, as_json):
    state = run_state(ctx)
    text = state.client.call("GET", f"/jobs/{fqid}")
    output(state, text, as_json, _render_job)


def _simple_job_verb(verb):
    @click.argument("job_id", type=int)
    @click.option("--json", "as_json", is_flag=True)
    @click.pass_context
    @guarded
    def command(ctx, job_id, as_json):
        state = run_state(ctx)
        text = state.client.call("POST", f"/jobs/{job_id}/{verb}")
        output(state, text, as_json,
               lambda doc: click.echo(f"job {doc['fqid']}: {doc['status']}"))

    command.__name__ = f"job_{verb}"
    return command


job.command("submit")(_simple_job_verb("submit"))
job.command("kill")(_simple_job_verb("kill"))
job.command("resubmit")(_simple_job_verb("resubmit"))


@job.command("copy")
@click.argument("job_id", type=int)
@click.option("--name", default=None)
@click.option("--backend", "backend_type", default=None)
@click.option("--bopt", "bopts", multiple=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def job_copy(ctx, job_id, name, backend_type, bopts, as_json):
    """Copy a job; the copy is new and modifiable."""
    state = run_state(ctx)
    body = {}
    if name is not None:
        body["name"] = name
    if backend_type is not None:
        body["backend"] = {"type": backend_type, **_kv_pairs(bopts)}
    text = state.client.call("POST", f"/jobs/{job_id}/copy", body=body)
    output(state, text, as_json,
           lambda doc: click.echo(f"copied to job {doc['id']}"))


@job.command("rm")
@click.argument("job_id", type=int)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def job_rm(ctx, job_id, as_json):
    state = run_state(ctx)
    text = state.client.call("DELETE", f"/jobs/{job_id}")
    output(state, text, as_json,
           lambda doc: click.echo(f"removed job {doc['removed']}"))


@job.command("peek")
@click.argument("fqid")
@click.argument("filename", default="stdout")
@click.option("--lines", type=int, default=None)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def job_peek(ctx, fqid, filename, lines, as_json):
    """Print the tail of a job output file (default stdout)."""
    state = run_state(ctx)
    params = {"file": filename}
    if lines is not None:
        params["lines"] = lines
    text = state.client.call("GET", f"/jobs/{fqid}/peek", params=params)
    output(state, text, as_json,
           lambda doc: sys.stdout.write(doc["text"]))


@job.command("wait")
@click.argument("job_id", type=int)
@click.option("--timeout", type=float, default=60.0, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def job_wait(ctx, job_id, timeout, as_json):
    """Block until the job reaches a terminal state."""
    state = run_state(ctx)
    deadline = time.monotonic() + timeout
    while True:
        if isinstance(state.client, EmbeddedClient):
            state.client.session.pump_monitor()
        text = state.client.call("GET", f"/jobs/{job_id}")
        doc = json.loads(text)
        if doc["status"] in ("completed", "failed", "killed"):
            output(state, text, as_json,
                   lambda d: click.echo(f"job {d['fqid']}: {d['status']}"))
            return
        if time.monotonic() > deadline:
            raise ApiCallError(0, "Timeout",
                               f"job {job_id} still {doc['status']} after {timeout}s")
        time.sleep(0.1)


@job.command("merge")
@click.argument("job_id", type=int)
@click.option("--permissive", is_flag=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def job_merge(ctx, job_id, permissive, as_json):
    state = run_state(ctx)
    body = {"permissive": True} if permissive else {}
    text = state.client.call("POST", f"/jobs/{job_id}/merge", body=body)
    output(state, text, as_json,
           lambda doc: click.echo(f"merged: {', '.join(doc['merged'])}"))


# -- jobs (listing + bulk verbs) -------------------------------------------------

@main.group()
def jobs():
    """List and bulk-operate on selections of jobs."""


_FILTER_OPTIONS = [
    click.option("--status", default=None),
    click.option("--name", default=None),
    click.option("--app", "application", default=None),
    click.option("--backend", default=None),
]


def _with_filters(fn):
    for option in reversed(_FILTER_OPTIONS):
        fn = option(fn)
    return fn


def _filter_params(status, name, application, backend) -> dict:
    params = {}
    if status:
        params["status"] = status
    if name:
        params["name"] = name
    if application:
        params["application"] = application
    if backend:
        params["backend"] = backend
    return params


def _render_rows(rows):
    header = f"{'id':>4} {'name':<20} {'application':<14} {'backend':<12} {'status':<10} {'subjobs':<8}"
    click.echo(header)
    click.echo("-" * len(header))
    for row in rows:
        sub = row["subjobs"]
        sub_text = f"{sub['completed']}/{sub['total']}" if sub["total"] else "-"
        click.echo(f"{row['id']:>4} {row['name'] or '-':<20} "
                   f"{row['application_type']:<14} {row['backend_type']:<12} "
                   f"{row['status']:<10} {sub_text:<8}")


@jobs.command("list")
@_with_filters
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def jobs_list(ctx, status, name, application, backend, as_json):
    state = run_state(ctx)
    params = _filter_params(status, name, application, backend)
    text = state.client.call("GET", "/jobs", params=params)
    output(state, text, as_json, _render_rows)


def _bulk_verb(verb, method="POST"):
    @_with_filters
    @click.option("--json", "as_json", is_flag=True)
    @click.pass_context
    @guarded
    def command(ctx, status, name, application, backend, as_json):
        state = run_state(ctx)
        params = _filter_params(status, name, application, backend)
        rows = json.loads(state.client.call("GET", "/jobs", params=params))
        outcomes = []
        for row in rows:
            outcome = {"id": row["id"], "verb": verb}
            try:
                if verb == "remove":
                    doc = json.loads(state.client.call("DELETE", f"/jobs/{row['id']}"))
                    outcome["ok"] = True
                else:
                    doc = json.loads(state.client.call("POST",
                                                       f"/jobs/{row['id']}/{verb}"))
                    outcome["ok"] = True
                    outcome["status"] = doc["status"]
            except (ApiCallError, TaskyardError) as exc:
                outcome["ok"] = False
                outcome["error"] = getattr(exc, "code", type(exc).__name__)
                outcome["message"] = getattr(exc, "message", str(exc))
            outcomes.append(outcome)
        text = canon_json(outcomes)

        def render(payload):
            for entry in payload:
                if entry["ok"]:
                    click.echo(f"job {entry['id']}: {verb} ok"
                               + (f" ({entry['status']})" if "status" in entry else ""))
                else:
                    click.echo(f"job {entry['id']}: skipped ({entry['error']})")

        output(state, text, as_json, render)

    command.__name__ = f"jobs_{verb}"
    return command


jobs.command("submit")(_bulk_verb("submit"))
jobs.command("kill")(_bulk_verb("kill"))
jobs.command("resubmit")(_bulk_verb("resubmit"))
jobs.command("rm")(_bulk_verb("remove"))


# -- templates ---------------------------------------------------------------------

@main.group()
def template():
    """Reusable job configurations."""


@template.command("save")
@click.argument("job_id", type=int)
@click.option("--name", default="")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def template_save(ctx, job_id, name, as_json):
    state = run_state(ctx)
    text = state.client.call("POST", "/templates",
                             body={"job_id": job_id, "name": name})
    output(state, text, as_json,
           lambda doc: click.echo(f"template {doc['template_id']} saved"))


@template.command("list")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def template_list(ctx, as_json):
    state = run_state(ctx)
    text = state.client.call("GET", "/templates")

    def render(payload):
        for entry in payload:
            p = entry["payload"]
            click.echo(f"{entry['template_id']:>4} {entry['name'] or '-':<20} "
                       f"{p['application']['type']} on {p['backend']['type']}")

    output(state, text, as_json, render)


@template.command("new-from")
@click.argument("template_id", type=int)
@click.option("--name", default=None)
@click.option("--backend", "backend_type", default=None)
@click.option("--bopt", "bopts", multiple=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def template_new_from(ctx, template_id, name, backend_type, bopts, as_json):
    """Instantiate a template into a fresh job."""
    state = run_state(ctx)
    body = {}
    if name is not None:
        body["name"] = name
    if backend_type is not None:
        body["backend"] = {"type": backend_type, **_kv_pairs(bopts)}
    text = state.client.call("POST", f"/templates/{template_id}/instantiate",
                             body=body)
    output(state, text, as_json,
           lambda doc: click.echo(f"created job {doc['id']}"))


# -- jobtree ---------------------------------------------------------------------------

@main.group()
def tree():
    """Hierarchical labelling of jobs."""


@tree.command("mkdir")
@click.argument("path")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def tree_mkdir(ctx, path, as_json):
    state = run_state(ctx)
    text = state.client.call("POST", "/jobtree", body={"op": "mkdir", "path": path})
    output(state, text, as_json, lambda doc: click.echo(f"created {doc['path']}"))


@tree.command("add")
@click.argument("path")
@click.argument("job_id", type=int)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def tree_add(ctx, path, job_id, as_json):
    state = run_state(ctx)
    text = state.client.call("POST", "/jobtree",
                             body={"op": "add", "path": path, "job_id": job_id})
    output(state, text, as_json,
           lambda doc: click.echo(f"{doc['path']}: jobs {doc['job_ids']}"))


@tree.command("ls")
@click.argument("path", default="/")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def tree_ls(ctx, path, as_json):
    state = run_state(ctx)
    text = state.client.call("GET", "/jobtree", params={"path": path})

    def render(doc):
        for child in doc["children"]:
            click.echo(f"{child}/")
        for job_id in doc["job_ids"]:
            click.echo(f"job {job_id}")

    output(state, text, as_json, render)


@tree.command("rm")
@click.argument("path")
@click.option("-r", "--recursive", is_flag=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def tree_rm(ctx, path, recursive, as_json):
    state = run_state(ctx)
    text = state.client.call("POST", "/jobtree",
                             body={"op": "rm", "path": path,
                                   "recursive": recursive})
    output(state, text, as_json, lambda doc: click.echo(f"removed {path}"))


# -- credential -----------------------------------------------------------------------

@main.group()
def cred():
    """Session credential management."""


@cred.command("status")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def cred_status(ctx, as_json):
    state = run_state(ctx)
    text = state.client.call("GET", "/credential")

    def render(doc):
        if doc.get("state") == "absent":
            click.echo("no credential configured")
        else:
            click.echo(f"{doc['label']}: {doc['state']} "
                       f"(remaining {doc['remaining_s']:.0f}s)")

    output(state, text, as_json, render)


@cred.command("renew")
@click.option("--ttl", "extra_ttl_s", type=float, default=None)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def cred_renew(ctx, extra_ttl_s, as_json):
    state = run_state(ctx)
    body = {"extra_ttl_s": extra_ttl_s} if extra_ttl_s else {}
    text = state.client.call("POST", "/credential/renew", body=body)
    output(state, text, as_json,
           lambda doc: click.echo(f"{doc['label']}: {doc['state']}"))


@cred.command("destroy")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def cred_destroy(ctx, as_json):
    state = run_state(ctx)
    text = state.client.call("POST", "/credential/destroy")
    output(state, text, as_json,
           lambda doc: click.echo(f"{doc['label']}: {doc['state']}"))


# -- robot ---------------------------------------------------------------------------------

@main.group()
def robot():
    """Scripted periodic pipelines."""


@robot.command("run")
@click.argument("pipeline_file", type=click.Path(exists=True))
@click.option("--wait/--no-wait", default=True, show_default=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def robot_run(ctx, pipeline_file, wait, as_json):
    """Run a pipeline document (JSON file)."""
    state = run_state(ctx)
    body = json.loads(Path(pipeline_file).read_text())
    text = state.client.call("POST", f"/robot/run?wait={'true' if wait else 'false'}",
                             body=body)

    def render(doc):
        if "summary" in doc:
            summary = doc["summary"]
            click.echo(f"run {doc['run_id']}: {doc['status']}; "
                       f"{summary['completed']}/{summary['total']} completed")
        else:
            click.echo(f"run {doc['run_id']}: {doc['status']}")

    output(state, text, as_json, render)


@robot.command("runs")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def robot_runs(ctx, as_json):
    state = run_state(ctx)
    text = state.client.call("GET", "/robot/runs")

    def render(payload):
        for doc in payload:
            click.echo(f"run {doc['run_id']}: {doc['status']} "
                       f"(started {doc['started_at']})")

    output(state, text, as_json, render)


# -- events ------------------------------------------------------------------------------------

@main.command("events")
@click.option("--since", type=int, default=0)
@click.option("--limit", type=int, default=None)
@click.pass_context
@guarded
def events(ctx, since, limit):
    """Tail the daemon's live event stream (one JSON object per line)."""
    state = run_state(ctx)
    if state.embedded:
        raise ApiCallError(0, "Unsupported",
                           "the event stream needs a running daemon")
    for line in state.client.stream_events(since=since, limit=limit):
        click.echo(line)


# -- daemon -------------------------------------------------------------------------------------

@main.group()
def daemon():
    """Run and control the daemon owning the repository."""


def run_daemon(cfg: ConfigFile):
    import uvicorn

    from ..session import Session
    from .api import create_app

    logging.basicConfig(
        level=logging.DEBUG if cfg.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    if cfg.verbose:
        logging.getLogger("taskyard.backends.commands").setLevel(logging.INFO)

    session = Session(cfg.repository_root, cfg.workspace_root,
                      **cfg.session_kwargs())
    session.start_monitor()
    holder = {}

    def on_shutdown():
        server = holder.get("server")
        if server is not None:
            server.should_exit = True

    app = create_app(session, auth_token=cfg.auth_token, on_shutdown=on_shutdown)
    config = uvicorn.Config(app, host=cfg.bind, port=cfg.port, log_level="warning")
    server = uvicorn.Server(config)
    holder["server"] = server
    try:
        server.run()
    finally:
        session.close()


@daemon.command("start")
@click.option("--bind", default=None)
@click.option("--port", type=int, default=None)
@click.pass_context
@guarded
def daemon_start(ctx, bind, port):
    """Run the daemon in the foreground."""
    state = run_state(ctx)
    overrides = {}
    if bind:
        overrides[("http", "bind")] = bind
    if port:
        overrides[("http", "port")] = port
    cfg = state.load_cfg(overrides=overrides)
    run_daemon(cfg)


@daemon.command("stop")
@click.pass_context
@guarded
def daemon_stop(ctx):
    state = run_state(ctx)
    state.client.call("POST", "/daemon/shutdown")
    click.echo("daemon stopping")


@daemon.command("status")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@guarded
def daemon_status(ctx, as_json):
    state = run_state(ctx)
    text = state.client.call("GET", "/health")
    output(state, text, as_json,
           lambda doc: click.echo(
               f"daemon ok: {doc['jobs']} jobs, monitor "
               f"{'running' if doc['monitor_running'] else 'stopped'}"))


if __name__ == "__main__":
    main()
