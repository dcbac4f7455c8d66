// Monitoring-table state: a fold of the live event stream over the last
// jobs snapshot.  Events recolor rows immediately; rows whose structured
// fields may have shifted (timestamps, subjob summaries) are marked stale
// so the app can refetch just those rows.  Resolving every stale row makes
// the folded state converge exactly to a fresh GET /jobs snapshot.

import type { JobDocument, JobRow, JobStatus, MonitorEvent } from "./types.js";

export interface TableState {
  rows: Map<number, JobRow>;
  lastSeq: number;
  stale: Set<number>;
}

export function emptyState(): TableState {
  return { rows: new Map(), lastSeq: 0, stale: new Set() };
}

export function fromSnapshot(rows: JobRow[], lastSeq = 0): TableState {
  const state = emptyState();
  state.lastSeq = lastSeq;
  for (const row of rows) {
    state.rows.set(row.id, { ...row, subjobs: { ...row.subjobs } });
  }
  return state;
}

export function applyEvent(state: TableState, event: MonitorEvent): TableState {
  if (event.seq > state.lastSeq) {
    state.lastSeq = event.seq;
  }
  if (event.job_id === null) {
    return state; // session-level events (credential) carry no row changes
  }
  if (event.kind !== "status_changed") {
    return state; // wrapper events feed the log/peek views, not the table
  }
  if (event.subjob_index !== null) {
    // a subjob moved: the master's summary needs refreshing
    const row = state.rows.get(event.job_id);
    if (row && event.payload.new === "completed") {
      row.subjobs.completed += 1;
    }
    state.stale.add(event.job_id);
    return state;
  }
  const row = state.rows.get(event.job_id);
  if (row) {
    row.status = event.payload.new as JobStatus;
  }
  // timestamps and backend-reported fields changed server-side
  state.stale.add(event.job_id);
  return state;
}

export function resolveRow(state: TableState, row: JobRow): TableState {
  state.rows.set(row.id, { ...row, subjobs: { ...row.subjobs } });
  state.stale.delete(row.id);
  return state;
}

export function dropRow(state: TableState, jobId: number): TableState {
  state.rows.delete(jobId);
  state.stale.delete(jobId);
  return state;
}

export function staleIds(state: TableState): number[] {
  return [...state.stale].sort((a, b) => a - b);
}

export function rowsOf(state: TableState): JobRow[] {
  return [...state.rows.values()].sort((a, b) => a.id - b.id);
}

export function searchRows(rows: JobRow[], query: string): JobRow[] {
  const needle = query.trim().toLowerCase();
  if (!needle) return rows;
  return rows.filter(
    (row) =>
      row.name.toLowerCase().includes(needle) ||
      row.fqid === needle ||
      String(row.id) === needle,
  );
}

// Row colors are total over the six states and user-overridable.
export const DEFAULT_STATUS_COLORS: Record<JobStatus, string> = {
  new: "#8a8f98",
  submitted: "#c9a227",
  running: "#3b82d6",
  completed: "#3f9e4d",
  failed: "#d64545",
  killed: "#9a5bb5",
};

export function statusColor(
  status: JobStatus,
  overrides?: Partial<Record<JobStatus, string>>,
): string {
  return overrides?.[status] ?? DEFAULT_STATUS_COLORS[status];
}

export function subjobSummaryText(row: JobRow): string {
  if (!row.subjobs.total) return "";
  return `${row.subjobs.completed}/${row.subjobs.total}`;
}

// Build a table row from a full job document (GET /jobs/{id}); must match
// the server's own row projection so stale-row refetches converge.
export function rowFromDocument(doc: JobDocument): JobRow {
  const subjobs = doc.subjobs ?? [];
  return {
    id: doc.id,
    fqid: doc.fqid,
    name: doc.name,
    application_type: doc.application.type,
    backend_type: doc.backend.type,
    status: doc.status,
    actual_queue: doc.backend_handle?.actual_queue ?? null,
    actual_host: doc.backend_handle?.actual_host ?? null,
    submitted_at: doc.submitted_at,
    finished_at: doc.finished_at,
    subjobs: {
      total: subjobs.length,
      completed: subjobs.filter((s) => s.status === "completed").length,
    },
  };
}
