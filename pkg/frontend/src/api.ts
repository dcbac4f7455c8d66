// HTTP client for the daemon, plus the newline-delimited-JSON event stream
// reader with a sequence cursor for gapless reconnection.

import type {
  ApiErrorDocument,
  JobDocument,
  JobRow,
  MonitorEvent,
  SchemasDocument,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public detail: Record<string, unknown> = {},
  ) {
    super(message);
  }
}

// Pure NDJSON splitter: returns complete parsed objects plus the unconsumed
// tail (a torn line waiting for the next chunk).
export function splitNdjson(buffer: string): { parsed: unknown[]; rest: string } {
  const parsed: unknown[] = [];
  let start = 0;
  while (true) {
    const nl = buffer.indexOf("\n", start);
    if (nl < 0) break;
    const line = buffer.slice(start, nl).trim();
    start = nl + 1;
    if (!line) continue;
    parsed.push(JSON.parse(line));
  }
  return { parsed, rest: buffer.slice(start) };
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private token: string = "",
  ) {}

  private headers(json = false): Record<string, string> {
    const headers: Record<string, string> = {};
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    if (json) headers["Content-Type"] = "application/json";
    return headers;
  }

  private async call<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method,
      headers: this.headers(body !== undefined),
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    if (!response.ok) {
      let doc: ApiErrorDocument = {
        code: "HttpError",
        message: `${response.status}`,
        detail: {},
      };
      try {
        doc = (await response.json()) as ApiErrorDocument;
      } catch {
        // non-JSON error body; keep the status placeholder
      }
      throw new ApiError(response.status, doc.code, doc.message, doc.detail);
    }
    return (await response.json()) as T;
  }

  listJobs(params: Record<string, string> = {}): Promise<JobRow[]> {
    const query = new URLSearchParams(params).toString();
    return this.call("GET", `/jobs${query ? "?" + query : ""}`);
  }

  getJob(fqid: string | number): Promise<JobDocument> {
    return this.call("GET", `/jobs/${fqid}`);
  }

  getSubjobs(jobId: number): Promise<JobDocument[]> {
    return this.call("GET", `/jobs/${jobId}/subjobs`);
  }

  createJob(document: Record<string, unknown>): Promise<JobDocument> {
    return this.call("POST", "/jobs", document);
  }

  jobVerb(jobId: number, verb: "submit" | "kill" | "resubmit"): Promise<JobDocument> {
    return this.call("POST", `/jobs/${jobId}/${verb}`);
  }

  copyJob(jobId: number, overrides: Record<string, unknown> = {}): Promise<JobDocument> {
    return this.call("POST", `/jobs/${jobId}/copy`, overrides);
  }

  removeJob(jobId: number): Promise<{ removed: number }> {
    return this.call("DELETE", `/jobs/${jobId}`);
  }

  mergeJob(jobId: number, permissive = false): Promise<{ merged: string[] }> {
    return this.call("POST", `/jobs/${jobId}/merge`, { permissive });
  }

  peek(
    fqid: string | number,
    file = "stdout",
    lines?: number,
  ): Promise<{ job: string; file: string; text: string }> {
    const params = new URLSearchParams({ file });
    if (lines !== undefined) params.set("lines", String(lines));
    return this.call("GET", `/jobs/${fqid}/peek?${params}`);
  }

  schemas(): Promise<SchemasDocument> {
    return this.call("GET", "/schemas");
  }

  credential(): Promise<Record<string, unknown>> {
    return this.call("GET", "/credential");
  }

  credentialVerb(verb: "renew" | "destroy"): Promise<Record<string, unknown>> {
    return this.call("POST", `/credential/${verb}`, {});
  }

  // Long-lived NDJSON stream; resolves when the server or the caller ends it.
  async streamEvents(
    onEvent: (event: MonitorEvent) => void,
    options: { since?: number; signal?: AbortSignal } = {},
  ): Promise<void> {
    const since = options.since ?? 0;
    const response = await fetch(`${this.baseUrl}/events?since=${since}`, {
      headers: this.headers(),
      signal: options.signal,
    });
    if (!response.ok || !response.body) {
      throw new ApiError(response.status, "StreamError", "event stream refused");
    }
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    while (true) {
      const { done, value } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      const { parsed, rest } = splitNdjson(buffer);
      buffer = rest;
      for (const event of parsed) {
        onEvent(event as MonitorEvent);
      }
    }
  }
}
