// Types mirroring the daemon's documented JSON contract.

export type JobStatus =
  | "new"
  | "submitted"
  | "running"
  | "completed"
  | "failed"
  | "killed";

export type ValueType =
  | "string"
  | "integer"
  | "float"
  | "boolean"
  | "path"
  | "string_list"
  | "string_map";

export type Access = "read_write" | "read_only";

export interface AttributeDescriptor {
  name: string;
  value_type: ValueType;
  access: Access;
  default: unknown;
  doc: string;
}

export interface PluginSchema {
  name: string;
  category: string;
  version: number;
  doc: string;
  attributes: AttributeDescriptor[];
}

export interface SchemasDocument {
  applications: PluginSchema[];
  backends: PluginSchema[];
  datasets: PluginSchema[];
  splitters: PluginSchema[];
  mergers: PluginSchema[];
}

export interface SubjobSummary {
  total: number;
  completed: number;
}

export interface JobRow {
  id: number;
  fqid: string;
  name: string;
  application_type: string;
  backend_type: string;
  status: JobStatus;
  actual_queue: string | null;
  actual_host: string | null;
  submitted_at: string | null;
  finished_at: string | null;
  subjobs: SubjobSummary;
}

export interface BackendHandleDocument {
  backend_id: string;
  raw_status: string;
  actual_queue: string | null;
  actual_host: string | null;
  exit_code: number | null;
}

export interface JobDocument {
  id: number;
  fqid: string;
  subjob_index: number | null;
  name: string;
  status: JobStatus;
  application: Record<string, unknown> & { type: string };
  backend: Record<string, unknown> & { type: string };
  inputdata: (Record<string, unknown> & { type: string }) | null;
  outputdata: (Record<string, unknown> & { type: string }) | null;
  splitter: (Record<string, unknown> & { type: string }) | null;
  merger: (Record<string, unknown> & { type: string }) | null;
  input_sandbox: string[];
  output_sandbox: string[];
  backend_handle: BackendHandleDocument | null;
  created_at: string | null;
  submitted_at: string | null;
  finished_at: string | null;
  read_only: boolean;
  subjobs?: JobDocument[];
}

export type EventKind =
  | "submitted"
  | "started"
  | "heartbeat"
  | "output_line"
  | "completed"
  | "status_changed"
  | "credential_warning";

export interface MonitorEvent {
  seq: number;
  kind: EventKind;
  job_id: number | null;
  subjob_index: number | null;
  timestamp: string;
  payload: Record<string, string>;
}

export interface ApiErrorDocument {
  code: string;
  message: string;
  detail: Record<string, unknown>;
}
