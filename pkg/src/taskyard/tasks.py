"""Splitters (fan a master job out into subjobs) and mergers (aggregate
subjob outputs back into the master's output directory)."""

from __future__ import annotations

import logging
import shlex
from pathlib import Path

from .core import Job, JobStatus
from .errors import (
    EmptySplit,
    FileMissing,
    MergeIncomplete,
    ShapeMismatch,
    SplitterMismatch,
)
from .plugins import (
    AttributeDescriptor,
    Category,
    PluginSchema,
    PluginRegistry,
    ValueType,
)

logger = logging.getLogger(__name__)

SUBJOB_HEADER = "===== subjob {index} =====\n"


# --------------------------------------------------------------------------
# Splitters
# --------------------------------------------------------------------------

ARG_SPLITTER_SCHEMA = PluginSchema(
    plugin_name="ArgSplitter",
    category=Category.SPLITTER,
    version=1,
    doc="One subjob per entry, overriding the application arguments each time.",
    attributes=[
        AttributeDescriptor(
            "args", ValueType.STRING_LIST,
            doc="One entry per subjob; each entry is split shell-style into "
                "that subjob's argument list.",
        ),
    ],
)

FILE_DATASET_SPLITTER_SCHEMA = PluginSchema(
    plugin_name="FileDatasetSplitter",
    category=Category.SPLITTER,
    version=1,
    doc="Partition a FileListDataset into contiguous chunks, one per subjob.",
    attributes=[
        AttributeDescriptor("files_per_subjob", ValueType.INTEGER, default=1,
                            doc="How many dataset files each subjob processes."),
    ],
)


def _make_subjob(master: Job, index: int) -> Job:
    sub = Job(
        id=master.id,
        application=master.application.copy(),
        backend=master.backend.copy(),
        name=master.name,
        inputdata=master.inputdata.copy() if master.inputdata else None,
        outputdata=master.outputdata.copy() if master.outputdata else None,
        input_sandbox=list(master.input_sandbox),
        output_sandbox=list(master.output_sandbox),
        subjob_index=index,
    )
    return sub


class ArgSplitterBehavior:
    def split(self, splitter, master: Job, registry: PluginRegistry) -> list[Job]:
        entries = splitter.get("args")
        if not entries:
            raise EmptySplit("ArgSplitter has no argument entries")
        subjobs = []
        for index, entry in enumerate(entries):
            sub = _make_subjob(master, index)
            sub.application.set_system("args", shlex.split(entry))
            subjobs.append(sub)
        return subjobs


class FileDatasetSplitterBehavior:
    def split(self, splitter, master: Job, registry: PluginRegistry) -> list[Job]:
        if master.inputdata is None or master.inputdata.type_name != "FileListDataset":
            raise SplitterMismatch(
                "FileDatasetSplitter needs a FileListDataset as inputdata"
            )
        files = master.inputdata.get("files")
        if not files:
            raise EmptySplit("input dataset has no files")
        per = splitter.get("files_per_subjob")
        if per < 1:
            raise SplitterMismatch("files_per_subjob must be >= 1")
        chunks = [files[i:i + per] for i in range(0, len(files), per)]
        subjobs = []
        for index, chunk in enumerate(chunks):
            sub = _make_subjob(master, index)
            sub.inputdata.set_system("files", chunk)
            subjobs.append(sub)
        return subjobs


def split_job(registry: PluginRegistry, master: Job) -> list[Job]:
    """Fan the master out into subjobs according to its splitter component.

    Subjobs carry copies of the master's components but never a splitter or
    merger of their own (one level of splitting only).
    """
    if master.status is not JobStatus.NEW:
        raise SplitterMismatch("only a new job can be split")
    if master.splitter is None:
        raise SplitterMismatch("job has no splitter")
    behavior = registry.behavior_of(Category.SPLITTER, master.splitter.type_name)
    subjobs = behavior.split(master.splitter, master, registry)
    if not subjobs:
        raise EmptySplit("splitter produced no subjobs")
    return subjobs


# --------------------------------------------------------------------------
# Mergers
# --------------------------------------------------------------------------

TEXT_MERGER_SCHEMA = PluginSchema(
    plugin_name="TextMerger",
    category=Category.MERGER,
    version=1,
    doc="Concatenate subjob stdout and stderr, in subjob-index order, with "
        "one header line per subjob.",
    attributes=[
        AttributeDescriptor("permissive", ValueType.BOOLEAN, default=False,
                            doc="Merge over completed subjobs even when some failed."),
    ],
)

TABLE_SUM_MERGER_SCHEMA = PluginSchema(
    plugin_name="TableSumMerger",
    category=Category.MERGER,
    version=1,
    doc="Element-wise sum of a whitespace-separated numeric table produced "
        "by every subjob.",
    attributes=[
        AttributeDescriptor("table_file", ValueType.STRING, default="table.dat",
                            doc="Name of the table file in each subjob's output."),
        AttributeDescriptor("permissive", ValueType.BOOLEAN, default=False,
                            doc="Merge over completed subjobs even when some failed."),
    ],
)


def _mergeable_subjobs(master: Job, permissive: bool) -> list[Job]:
    if not master.subjobs:
        raise MergeIncomplete(f"job {master.fqid} has no subjobs")
    pending = [s.fqid for s in master.subjobs if not s.status.is_terminal()]
    if pending:
        raise MergeIncomplete(f"subjobs still active: {pending}")
    completed = [s for s in master.subjobs if s.status is JobStatus.COMPLETED]
    not_completed = [s.fqid for s in master.subjobs
                     if s.status is not JobStatus.COMPLETED]
    if not_completed and not permissive:
        raise MergeIncomplete(
            f"subjobs did not complete: {not_completed}; "
            "set the merger's permissive flag to merge the rest"
        )
    if not completed:
        raise MergeIncomplete("no completed subjobs to merge")
    return completed


class TextMergerBehavior:
    files = ("stdout", "stderr")

    def merge(self, merger, master: Job, workspace, permissive=None) -> list[str]:
        if permissive is None:
            permissive = merger.get("permissive")
        subjobs = _mergeable_subjobs(master, permissive)
        out_dir = workspace.output_dir(master)
        out_dir.mkdir(parents=True, exist_ok=True)
        produced = []
        for name in self.files:
            target = out_dir / f"{name}.merged"
            with open(target, "w") as out:
                for sub in subjobs:
                    out.write(SUBJOB_HEADER.format(index=sub.subjob_index))
                    source = workspace.output_dir(sub) / name
                    if source.exists():
                        out.write(source.read_text())
            produced.append(target.name)
        return produced


def parse_table(path: Path) -> list[list[float]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            rows.append([float(cell) for cell in line.split()])
        except ValueError:
            raise ShapeMismatch(f"{path}: non-numeric cell in line {line!r}")
    return rows


def format_table(rows: list[list[float]]) -> str:
    def fmt(x: float) -> str:
        return str(int(x)) if float(x).is_integer() else repr(x)

    return "".join(" ".join(fmt(c) for c in row) + "\n" for row in rows)


class TableSumMergerBehavior:
    def merge(self, merger, master: Job, workspace, permissive=None) -> list[str]:
        if permissive is None:
            permissive = merger.get("permissive")
        subjobs = _mergeable_subjobs(master, permissive)
        table_name = merger.get("table_file")
        total = None
        shape = None
        for sub in subjobs:
            path = workspace.output_dir(sub) / table_name
            if not path.exists():
                raise FileMissing(
                    f"subjob {sub.fqid} produced no {table_name!r}"
                )
            rows = parse_table(path)
            this_shape = [len(r) for r in rows]
            if total is None:
                total, shape = rows, this_shape
                continue
            if this_shape != shape:
                raise ShapeMismatch(
                    f"subjob {sub.fqid}: table shape {this_shape} != {shape}"
                )
            for i, row in enumerate(rows):
                for j, cell in enumerate(row):
                    total[i][j] += cell
        out_dir = workspace.output_dir(master)
        out_dir.mkdir(parents=True, exist_ok=True)
        target = out_dir / f"{table_name}.merged"
        target.write_text(format_table(total))
        return [target.name]


def merge_job(registry: PluginRegistry, master: Job, workspace,
              permissive=None) -> list[str]:
    """Run the master's merger over its subjob outputs; returns produced files."""
    if master.merger is None:
        raise MergeIncomplete(f"job {master.fqid} has no merger configured")
    behavior = registry.behavior_of(Category.MERGER, master.merger.type_name)
    return behavior.merge(master.merger, master, workspace, permissive)
