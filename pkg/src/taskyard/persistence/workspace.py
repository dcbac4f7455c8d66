"""Per-job workspace: sandbox staging, output collection and peek.

Layout under the workspace root:

    <root>/<job_id>/input/            staged input sandbox files
    <root>/<job_id>/output/           retrieved outputs
    <root>/<job_id>/run/              wrapper, stdout/stderr, event spool
    <root>/<job_id>/<subjob>/...      same three directories per subjob
"""

from __future__ import annotations

import logging
import shutil
import warnings
from pathlib import Path

from ..errors import FileMissing, PeekUnavailable, SandboxSizeWarning, WorkspaceMissing

logger = logging.getLogger(__name__)

DEFAULT_SANDBOX_WARN_BYTES = 10 * 1024 * 1024

SPOOL_FILENAME = "__events__"
EXITCODE_FILENAME = "__exitcode__"


class Workspace:
    def __init__(self, root, sandbox_warn_bytes: int = DEFAULT_SANDBOX_WARN_BYTES):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.sandbox_warn_bytes = sandbox_warn_bytes

    # -- layout -----------------------------------------------------------

    def job_dir(self, job) -> Path:
        path = self.root / str(job.id)
        if job.subjob_index is not None:
            path = path / str(job.subjob_index)
        return path

    def input_dir(self, job) -> Path:
        return self.job_dir(job) / "input"

    def output_dir(self, job) -> Path:
        return self.job_dir(job) / "output"

    def run_dir(self, job) -> Path:
        return self.job_dir(job) / "run"

    def spool_path(self, job) -> Path:
        return self.run_dir(job) / SPOOL_FILENAME

    def allocate(self, job):
        """Create the directory trio for a job (idempotent)."""
        for d in (self.input_dir(job), self.output_dir(job), self.run_dir(job)):
            d.mkdir(parents=True, exist_ok=True)

    def remove(self, job_id: int):
        """Delete the whole workspace of a master job, subjob dirs included."""
        path = self.root / str(job_id)
        if path.exists():
            shutil.rmtree(path)

    # -- sandbox staging ----------------------------------------------------

    def stage_input(self, job):
        """Copy the input sandbox into the job's input directory.

        Files above the size threshold are staged anyway but draw a
        SandboxSizeWarning: large data belongs in a dataset, not the sandbox.
        """
        self.allocate(job)
        dest = self.input_dir(job)
        for entry in job.input_sandbox:
            src = Path(entry)
            if not src.exists():
                raise FileMissing(f"input sandbox file not found: {src}")
            size = src.stat().st_size
            if size > self.sandbox_warn_bytes:
                message = (
                    f"sandbox file {src} is {size} bytes "
                    f"(> {self.sandbox_warn_bytes}); consider a dataset"
                )
                warnings.warn(SandboxSizeWarning(message))
                logger.warning(message)
            shutil.copy2(src, dest / src.name)

    def prepare_run(self, job) -> Path:
        """Create the run directory and place staged inputs in it; returns it."""
        job_dir = self.job_dir(job)
        if not job_dir.exists():
            raise WorkspaceMissing(f"workspace missing for job {job.fqid}")
        run = self.run_dir(job)
        run.mkdir(parents=True, exist_ok=True)
        for item in self.input_dir(job).iterdir():
            if item.is_file():
                shutil.copy2(item, run / item.name)
        return run

    def collect_output(self, job, files):
        """Copy retrieved files into the job's output directory."""
        dest = self.output_dir(job)
        dest.mkdir(parents=True, exist_ok=True)
        collected = []
        for entry in files:
            src = Path(entry)
            if not src.exists():
                raise FileMissing(f"output file not found: {src}")
            shutil.copy2(src, dest / src.name)
            collected.append(src.name)
        return collected

    # -- inspection ---------------------------------------------------------

    def peek(self, job, filename: str = "stdout", last_n_lines=None) -> str:
        """Return the tail of a job file, looking in output first, then run."""
        for base in (self.output_dir(job), self.run_dir(job)):
            path = base / filename
            if path.exists():
                text = path.read_text(errors="replace")
                if last_n_lines is None:
                    return text
                if last_n_lines <= 0:
                    return ""
                lines = text.splitlines(keepends=True)
                return "".join(lines[-last_n_lines:])
        raise PeekUnavailable(
            f"job {job.fqid} has no file named {filename!r}", file=filename
        )
