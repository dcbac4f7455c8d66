// Dashboard wiring: live monitoring table, schema-driven job builder,
// details drawer with peek, and the scrolling event log.  All structure is
// derived from /schemas and the documented JSON contract at runtime.

import { ApiClient, ApiError } from "./api.js";
import {
  BuilderSelection,
  FieldError,
  FormModel,
  buildComponentDocument,
  buildFormModel,
} from "./form.js";
import { eventClass, formatEvent } from "./log.js";
import {
  TableState,
  applyEvent,
  dropRow,
  fromSnapshot,
  resolveRow,
  rowFromDocument,
  rowsOf,
  searchRows,
  staleIds,
  statusColor,
  subjobSummaryText,
} from "./table.js";
import type {
  JobRow,
  JobStatus,
  MonitorEvent,
  PluginSchema,
  SchemasDocument,
} from "./types.js";

// users can repaint the six status colors: localStorage key
// "taskyard.statusColors" holds e.g. {"failed": "#ff0066"}
function colorOverrides(): Partial<Record<JobStatus, string>> {
  try {
    return JSON.parse(localStorage.getItem("taskyard.statusColors") ?? "{}");
  } catch {
    return {};
  }
}

const COLUMNS: Array<{ key: keyof JobRow | "subjobs"; label: string }> = [
  { key: "fqid", label: "id" },
  { key: "name", label: "name" },
  { key: "application_type", label: "application" },
  { key: "backend_type", label: "backend" },
  { key: "status", label: "status" },
  { key: "subjobs", label: "subjobs" },
  { key: "actual_queue", label: "queue" },
  { key: "actual_host", label: "host" },
  { key: "submitted_at", label: "submitted" },
  { key: "finished_at", label: "finished" },
];

const OPTIONAL_SLOTS: Array<{
  slot: "dataset" | "splitter" | "merger";
  group: keyof SchemasDocument;
  bodyKey: "inputdata" | "splitter" | "merger";
}> = [
  { slot: "dataset", group: "datasets", bodyKey: "inputdata" },
  { slot: "splitter", group: "splitters", bodyKey: "splitter" },
  { slot: "merger", group: "mergers", bodyKey: "merger" },
];

class Dashboard {
  private api: ApiClient;
  private state: TableState = fromSnapshot([]);
  private schemas!: SchemasDocument;
  private search = "";
  private visibleColumns = new Set(COLUMNS.map((c) => c.key as string));
  private unfolded = new Set<number>();
  private selectedJob: string | null = null;
  private forms = new Map<string, FormModel>();
  private fieldValues = new Map<string, string | boolean>();
  private streamAbort: AbortController | null = null;
  private peekTimer: number | null = null;

  constructor(private root: HTMLElement) {
    const base =
      new URLSearchParams(location.search).get("api") ??
      `${location.protocol}//${location.hostname}:8425`;
    const token = new URLSearchParams(location.search).get("token") ?? "";
    this.api = new ApiClient(base, token);
  }

  async start(): Promise<void> {
    this.root.innerHTML = `
      <header>
        <h1>taskyard</h1>
        <input id="search" type="search" placeholder="filter by name or id" />
        <details id="columns"><summary>columns</summary><div id="column-list"></div></details>
        <span id="credential" class="badge"></span>
        <span id="connection" class="badge">connecting…</span>
      </header>
      <main>
        <section id="table-panel"><table id="jobs-table"><thead></thead><tbody></tbody></table></section>
        <aside id="side">
          <section id="builder"><h2>new job</h2><div id="builder-body"></div></section>
          <section id="drawer"><h2>details</h2><div id="drawer-body"><p class="dim">select a job</p></div></section>
        </aside>
      </main>
      <section id="log-panel"><h2>events</h2><ul id="log"></ul></section>
    `;
    (this.root.querySelector("#search") as HTMLInputElement).addEventListener(
      "input",
      (e) => {
        this.search = (e.target as HTMLInputElement).value;
        this.renderTable();
      },
    );
    this.schemas = await this.api.schemas();
    this.renderColumnChooser();
    this.renderBuilder();
    await this.refreshCredential();
    await this.resync();
    this.connectStream();
  }

  // -- live data ---------------------------------------------------------

  private async resync(): Promise<void> {
    const rows = await this.api.listJobs();
    this.state = fromSnapshot(rows, this.state.lastSeq);
    this.renderTable();
  }

  private connectStream(): void {
    const banner = this.root.querySelector("#connection") as HTMLElement;
    const run = async () => {
      banner.textContent = "live";
      banner.className = "badge ok";
      this.streamAbort = new AbortController();
      await this.api.streamEvents((event) => this.onEvent(event), {
        since: this.state.lastSeq,
        signal: this.streamAbort.signal,
      });
      throw new Error("stream ended");
    };
    run().catch(() => {
      banner.textContent = "connection lost – retrying";
      banner.className = "badge bad";
      setTimeout(() => {
        this.resync()
          .then(() => this.connectStream())
          .catch(() => this.connectStream());
      }, 1500);
    });
  }

  private onEvent(event: MonitorEvent): void {
    applyEvent(this.state, event);
    this.appendLog(event);
    for (const jobId of staleIds(this.state)) {
      this.api
        .getJob(jobId)
        .then((doc) => {
          resolveRow(this.state, rowFromDocument(doc));
          this.renderTable();
        })
        .catch((err) => {
          if (err instanceof ApiError && err.status === 404) {
            dropRow(this.state, jobId);
            this.renderTable();
          }
        });
      this.state.stale.delete(jobId);
    }
    if (event.kind === "credential_warning") {
      void this.refreshCredential();
    }
    this.renderTable();
  }

  private async refreshCredential(): Promise<void> {
    const badge = this.root.querySelector("#credential") as HTMLElement;
    try {
      const doc = await this.api.credential();
      const state = String(doc.state ?? "absent");
      badge.textContent = `credential: ${state}`;
      badge.className =
        "badge " + (state === "valid" ? "ok" : state === "warning" ? "warn" : "bad");
    } catch {
      badge.textContent = "credential: ?";
    }
  }

  // -- monitoring table -----------------------------------------------------

  private renderColumnChooser(): void {
    const list = this.root.querySelector("#column-list") as HTMLElement;
    list.innerHTML = "";
    for (const column of COLUMNS) {
      const label = document.createElement("label");
      const box = document.createElement("input");
      box.type = "checkbox";
      box.checked = this.visibleColumns.has(column.key as string);
      box.addEventListener("change", () => {
        if (box.checked) this.visibleColumns.add(column.key as string);
        else this.visibleColumns.delete(column.key as string);
        this.renderTable();
      });
      label.append(box, ` ${column.label}`);
      list.append(label);
    }
  }

  private renderTable(): void {
    const columns = COLUMNS.filter((c) =>
      this.visibleColumns.has(c.key as string),
    );
    const head = this.root.querySelector("#jobs-table thead") as HTMLElement;
    head.innerHTML = `<tr>${columns.map((c) => `<th>${c.label}</th>`).join("")}</tr>`;
    const body = this.root.querySelector("#jobs-table tbody") as HTMLElement;
    body.innerHTML = "";
    for (const row of searchRows(rowsOf(this.state), this.search)) {
      body.append(this.renderRow(row, columns));
      if (this.unfolded.has(row.id)) {
        const holder = document.createElement("tr");
        const cell = document.createElement("td");
        cell.colSpan = columns.length;
        cell.className = "subjob-cell";
        cell.textContent = "loading subjobs…";
        holder.append(cell);
        body.append(holder);
        void this.fillSubjobs(row.id, cell, columns.length);
      }
    }
  }

  private renderRow(
    row: JobRow,
    columns: Array<{ key: keyof JobRow | "subjobs"; label: string }>,
  ): HTMLTableRowElement {
    const tr = document.createElement("tr");
    tr.style.borderLeft = `4px solid ${statusColor(row.status, colorOverrides())}`;
    for (const column of columns) {
      const td = document.createElement("td");
      if (column.key === "subjobs") {
        const summary = subjobSummaryText(row);
        if (summary) {
          const button = document.createElement("button");
          button.className = "fold";
          button.textContent =
            (this.unfolded.has(row.id) ? "▼ " : "▶ ") + summary;
          button.addEventListener("click", (e) => {
            e.stopPropagation();
            if (this.unfolded.has(row.id)) this.unfolded.delete(row.id);
            else this.unfolded.add(row.id);
            this.renderTable();
          });
          td.append(button);
        }
      } else if (column.key === "status") {
        const pill = document.createElement("span");
        pill.className = "pill";
        pill.style.background = statusColor(row.status, colorOverrides());
        pill.textContent = row.status;
        td.append(pill);
      } else {
        const value = row[column.key as keyof JobRow];
        td.textContent = value === null || value === undefined ? "" : String(value);
      }
      tr.append(td);
    }
    tr.addEventListener("click", () => {
      this.selectedJob = row.fqid;
      void this.renderDrawer();
    });
    return tr;
  }

  private async fillSubjobs(jobId: number, cell: HTMLElement, span: number): Promise<void> {
    try {
      const subjobs = await this.api.getSubjobs(jobId);
      cell.innerHTML = "";
      const list = document.createElement("div");
      list.className = "subjob-list";
      for (const sub of subjobs) {
        const entry = document.createElement("span");
        entry.className = "pill";
        entry.style.background = statusColor(sub.status, colorOverrides());
        entry.textContent = `${sub.fqid} ${sub.status}`;
        entry.addEventListener("click", () => {
          this.selectedJob = sub.fqid;
          void this.renderDrawer();
        });
        list.append(entry);
      }
      cell.append(list);
    } catch {
      cell.textContent = "subjobs unavailable";
    }
  }

  // -- builder -----------------------------------------------------------------

  private schemaGroup(group: keyof SchemasDocument): PluginSchema[] {
    return this.schemas[group];
  }

  private renderBuilder(): void {
    const body = this.root.querySelector("#builder-body") as HTMLElement;
    body.innerHTML = "";
    const selection: BuilderSelection = {
      application: this.schemaGroup("applications")[0]?.name ?? "",
      backend: this.schemaGroup("backends")[0]?.name ?? "",
    };

    const nameField = document.createElement("input");
    nameField.placeholder = "job name";
    nameField.id = "job-name";
    body.append(nameField);

    const fieldsHost = document.createElement("div");
    const selects: Array<[string, keyof SchemasDocument, boolean]> = [
      ["application", "applications", false],
      ["backend", "backends", false],
      ["dataset", "datasets", true],
      ["splitter", "splitters", true],
      ["merger", "mergers", true],
    ];
    for (const [slot, group, optional] of selects) {
      const label = document.createElement("label");
      label.textContent = slot;
      const select = document.createElement("select");
      select.dataset.slot = slot;
      if (optional) {
        select.append(new Option("(none)", ""));
      }
      for (const schema of this.schemaGroup(group)) {
        select.append(new Option(schema.name, schema.name));
      }
      const mutable = selection as unknown as Record<string, string | undefined>;
      select.addEventListener("change", () => {
        mutable[slot] = select.value || undefined;
        this.renderFields(fieldsHost, selection);
      });
      mutable[slot] = optional ? undefined : select.value;
      label.append(select);
      body.append(label);
    }
    body.append(fieldsHost);
    this.renderFields(fieldsHost, selection);

    const errorBox = document.createElement("p");
    errorBox.className = "error";
    const actions = document.createElement("div");
    actions.className = "actions";
    const createButton = document.createElement("button");
    createButton.textContent = "create";
    const submitButton = document.createElement("button");
    submitButton.textContent = "create + submit";
    actions.append(createButton, submitButton);
    body.append(actions, errorBox);

    const create = async (andSubmit: boolean) => {
      errorBox.textContent = "";
      this.clearFieldErrors();
      try {
        const document_ = this.collectJobDocument(selection, nameField.value);
        const created = await this.api.createJob(document_);
        if (andSubmit) {
          await this.api.jobVerb(created.id, "submit");
        }
        resolveRow(this.state, rowFromDocument(await this.api.getJob(created.id)));
        this.renderTable();
      } catch (err) {
        this.showBuilderError(err, errorBox);
      }
    };
    createButton.addEventListener("click", () => void create(false));
    submitButton.addEventListener("click", () => void create(true));
  }

  private renderFields(host: HTMLElement, selection: BuilderSelection): void {
    host.innerHTML = "";
    this.forms.clear();
    this.fieldValues.clear();
    const slots: Array<[string, keyof SchemasDocument, string | undefined]> = [
      ["application", "applications", selection.application],
      ["backend", "backends", selection.backend],
      ["dataset", "datasets", selection.dataset],
      ["splitter", "splitters", selection.splitter],
      ["merger", "mergers", selection.merger],
    ];
    for (const [slot, group, chosen] of slots) {
      if (!chosen) continue;
      const schema = this.schemaGroup(group).find((s) => s.name === chosen);
      if (!schema) continue;
      const model = buildFormModel(schema);
      this.forms.set(slot, model);
      const fieldset = document.createElement("fieldset");
      const legend = document.createElement("legend");
      legend.textContent = `${chosen}`;
      legend.title = model.doc;
      fieldset.append(legend);
      for (const field of model.fields) {
        const key = `${slot}.${field.name}`;
        const label = document.createElement("label");
        label.title = field.doc; // tooltip from the schema's doc string
        label.textContent = field.label;
        label.dataset.field = key;
        let input: HTMLInputElement | HTMLTextAreaElement;
        if (field.kind === "list" || field.kind === "map") {
          input = document.createElement("textarea");
          input.rows = 2;
          input.placeholder =
            field.kind === "map" ? "KEY=VALUE per line" : "one entry per line";
          input.value = String(field.initial);
        } else {
          input = document.createElement("input");
          if (field.kind === "checkbox") {
            input.type = "checkbox";
            input.checked = Boolean(field.initial);
          } else if (field.kind === "number") {
            input.type = "number";
            if (field.integer) input.step = "1";
            input.value = String(field.initial);
          } else {
            input.type = "text";
            input.value = String(field.initial);
          }
        }
        input.disabled = field.readOnly;
        input.addEventListener("input", () => {
          this.fieldValues.set(
            key,
            field.kind === "checkbox"
              ? (input as HTMLInputElement).checked
              : input.value,
          );
        });
        label.append(input);
        fieldset.append(label);
      }
      host.append(fieldset);
    }
  }

  private collectJobDocument(
    selection: BuilderSelection,
    name: string,
  ): Record<string, unknown> {
    const document_: Record<string, unknown> = { name };
    const values = (slot: string) => {
      const model = this.forms.get(slot);
      if (!model) return undefined;
      const slotValues: Record<string, string | boolean> = {};
      for (const field of model.fields) {
        const stored = this.fieldValues.get(`${slot}.${field.name}`);
        if (stored !== undefined) slotValues[field.name] = stored;
      }
      try {
        return buildComponentDocument(model, slotValues);
      } catch (err) {
        if (err instanceof FieldError) {
          throw new FieldError(`${slot}.${err.field}`, err.message);
        }
        throw err;
      }
    };
    document_.application = values("application");
    document_.backend = values("backend");
    for (const { slot, bodyKey } of OPTIONAL_SLOTS) {
      const component = values(slot);
      if (component) document_[bodyKey] = component;
    }
    return document_;
  }

  private clearFieldErrors(): void {
    for (const label of this.root.querySelectorAll("label.field-error")) {
      label.classList.remove("field-error");
      label.querySelector(".field-message")?.remove();
    }
  }

  private showBuilderError(err: unknown, box: HTMLElement): void {
    let field: string | null = null;
    let message = String(err);
    if (err instanceof FieldError) {
      field = err.field;
      message = err.message;
    } else if (err instanceof ApiError) {
      message = `${err.code}: ${err.message}`;
      const attr = err.detail?.attribute;
      if (typeof attr === "string") field = attr;
      // e.g. "exe not set" names the offending attribute
      const match = /^(\w+) /.exec(err.message);
      if (!field && match) field = match[1];
    }
    if (field) {
      const short = field.includes(".") ? field : null;
      for (const label of this.root.querySelectorAll<HTMLElement>(
        "label[data-field]",
      )) {
        const key = label.dataset.field ?? "";
        if (key === short || key.endsWith(`.${field}`)) {
          label.classList.add("field-error");
          const note = document.createElement("span");
          note.className = "field-message";
          note.textContent = message;
          label.append(note);
          return;
        }
      }
    }
    box.textContent = message;
  }

  // -- details drawer ---------------------------------------------------------------

  private async renderDrawer(): Promise<void> {
    const body = this.root.querySelector("#drawer-body") as HTMLElement;
    if (this.selectedJob === null) return;
    const fqid = this.selectedJob;
    let doc;
    try {
      doc = await this.api.getJob(fqid);
    } catch {
      body.innerHTML = `<p class="dim">job ${fqid} is gone</p>`;
      return;
    }
    body.innerHTML = "";
    const title = document.createElement("h3");
    title.textContent = `job ${doc.fqid} — ${doc.status}`;
    body.append(title);

    const grid = document.createElement("dl");
    const entries: Array<[string, unknown]> = [
      ["name", doc.name],
      ["application", JSON.stringify(doc.application)],
      ["backend", JSON.stringify(doc.backend)],
      ["splitter", doc.splitter ? JSON.stringify(doc.splitter) : "—"],
      ["merger", doc.merger ? JSON.stringify(doc.merger) : "—"],
      ["submitted", doc.submitted_at ?? "—"],
      ["finished", doc.finished_at ?? "—"],
    ];
    if (doc.backend_handle) {
      entries.push(["backend id", doc.backend_handle.backend_id]);
      entries.push(["raw status", doc.backend_handle.raw_status]);
      if (doc.backend_handle.exit_code !== null) {
        entries.push(["exit code", doc.backend_handle.exit_code]);
      }
    }
    for (const [key, value] of entries) {
      const dt = document.createElement("dt");
      dt.textContent = key;
      const dd = document.createElement("dd");
      dd.textContent = String(value);
      grid.append(dt, dd);
    }
    body.append(grid);

    const actions = document.createElement("div");
    actions.className = "actions";
    const verbs: Array<[string, () => Promise<unknown>]> = [
      ["submit", () => this.api.jobVerb(doc.id, "submit")],
      ["kill", () => this.api.jobVerb(doc.id, "kill")],
      ["resubmit", () => this.api.jobVerb(doc.id, "resubmit")],
      ["copy", () => this.api.copyJob(doc.id)],
      ["merge", () => this.api.mergeJob(doc.id)],
      ["remove", () => this.api.removeJob(doc.id)],
    ];
    const note = document.createElement("p");
    note.className = "error";
    for (const [verb, call] of verbs) {
      const button = document.createElement("button");
      button.textContent = verb;
      button.addEventListener("click", () => {
        note.textContent = "";
        call()
          .then(() => this.resync())
          .catch((err) => {
            note.textContent =
              err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
          });
      });
      actions.append(button);
    }
    body.append(actions, note);

    const peekTitle = document.createElement("h3");
    peekTitle.textContent = "peek: stdout";
    const peekBox = document.createElement("pre");
    peekBox.id = "peek-box";
    peekBox.textContent = "";
    body.append(peekTitle, peekBox);
    if (this.peekTimer !== null) {
      clearInterval(this.peekTimer);
    }
    const refreshPeek = async () => {
      try {
        const peeked = await this.api.peek(fqid, "stdout", 40);
        peekBox.textContent = peeked.text || "(empty)";
      } catch (err) {
        peekBox.textContent =
          err instanceof ApiError && err.code === "PeekUnavailable"
            ? "(no output yet)"
            : String(err);
      }
    };
    await refreshPeek();
    this.peekTimer = setInterval(refreshPeek, 1000) as unknown as number;
  }

  // -- event log -----------------------------------------------------------------------

  private appendLog(event: MonitorEvent): void {
    const log = this.root.querySelector("#log") as HTMLElement;
    const item = document.createElement("li");
    item.className = eventClass(event);
    item.textContent = formatEvent(event);
    log.append(item);
    while (log.children.length > 500) {
      log.removeChild(log.firstChild as Node);
    }
    log.scrollTop = log.scrollHeight;
  }
}

const root = document.getElementById("app");
if (root) {
  new Dashboard(root).start().catch((err) => {
    root.innerHTML = `<p class="error">dashboard failed to start: ${err}</p>`;
  });
}
