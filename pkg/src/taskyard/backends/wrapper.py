"""Job wrapper generation.

The wrapper is a self-contained POSIX shell script executed by every
backend.  It exports the job environment, announces lifecycle events to a
spool file (``__events__``) next to itself, runs the payload with stdout
and stderr captured to files, and records the numeric exit code in
``__exitcode__``.  Spool lines have the form::

    <epoch-seconds> <kind> <payload-to-end-of-line>
"""

from __future__ import annotations

import shlex
import stat
from dataclasses import dataclass
from pathlib import Path

from ..errors import WorkspaceMissing
from ..plugins import ConfiguredApplication

WRAPPER_FILENAME = "wrapper.sh"


@dataclass
class SensorConfig:
    heartbeat_interval_s: float = 10.0
    stream_output: bool = True


def generate_wrapper(configured: ConfiguredApplication, job_fqid: str,
                     sensor_config: SensorConfig, run_dir) -> Path:
    """Write the wrapper script into ``run_dir`` and return its path."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise WorkspaceMissing(f"run directory missing for job {job_fqid}: {run_dir}")

    exports = "\n".join(
        f"export {key}={shlex.quote(value)}"
        for key, value in sorted(configured.environment.items())
    )
    command = " ".join(shlex.quote(part) for part in configured.command_line)
    heartbeat = f"{sensor_config.heartbeat_interval_s:g}"

    tail_block = ""
    if sensor_config.stream_output:
        tail_block = """\
( tail -q -n +1 -s 0.2 -F --pid="$TY_CMD" stdout 2>/dev/null \\
    | while IFS= read -r line; do emit output_line "$line"; done ) &
TY_TAIL=$!
"""

    script = f"""\
#!/bin/sh
# job wrapper for {job_fqid}; runs from its own directory
cd "$(dirname "$0")" || exit 90
SPOOL="__events__"
: > "$SPOOL"
emit() {{
    printf '%s %s %s\\n' "$(date +%s)" "$1" "$2" >> "$SPOOL"
}}
{exports}
emit started job={job_fqid}
{command} > stdout 2> stderr &
TY_CMD=$!
emit heartbeat beat=0
( TY_BEAT=0
  while kill -0 "$TY_CMD" 2>/dev/null; do
    sleep {heartbeat}
    TY_BEAT=$((TY_BEAT + 1))
    kill -0 "$TY_CMD" 2>/dev/null && emit heartbeat beat=$TY_BEAT
  done ) &
TY_HB=$!
{tail_block}wait "$TY_CMD"
TY_RC=$?
kill "$TY_HB" 2>/dev/null
wait "$TY_HB" 2>/dev/null
{'wait "$TY_TAIL" 2>/dev/null' if sensor_config.stream_output else ':'}
printf '%s\\n' "$TY_RC" > __exitcode__
emit complete exit=$TY_RC
exit "$TY_RC"
"""
    path = run_dir / WRAPPER_FILENAME
    path.write_text(script)
    path.chmod(path.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP)
    return path


def parse_spool_line(line: str):
    """Split a spool line into (epoch_seconds, kind, payload); None if torn."""
    parts = line.rstrip("\n").split(" ", 2)
    if len(parts) < 2 or not parts[0].isdigit():
        return None
    ts = int(parts[0])
    kind = parts[1]
    payload = parts[2] if len(parts) > 2 else ""
    return ts, kind, payload
