// Formatting for the scrolling event log.

import type { MonitorEvent } from "./types.js";

export function formatEvent(event: MonitorEvent): string {
  const time = event.timestamp.slice(11, 19);
  const target = event.job_id === null
    ? "session"
    : `job ${event.subjob_index === null ? event.job_id : `${event.job_id}.${event.subjob_index}`}`;
  switch (event.kind) {
    case "status_changed":
      return `${time} ${target}: ${event.payload.old} → ${event.payload.new}`;
    case "output_line":
      return `${time} ${target} stdout: ${event.payload.line ?? ""}`;
    case "credential_warning":
      return `${time} credential ${event.payload.label ?? ""} expires in ${event.payload.remaining_s ?? "?"}s`;
    case "heartbeat":
      return `${time} ${target}: heartbeat`;
    default:
      return `${time} ${target}: ${event.kind}`;
  }
}

// css class per kind; credential warnings must stand out
export function eventClass(event: MonitorEvent): string {
  if (event.kind === "credential_warning") return "log-warning";
  if (event.kind === "status_changed" && event.payload.new === "failed") {
    return "log-failed";
  }
  if (event.kind === "output_line") return "log-output";
  return "log-info";
}
