// Schema-driven form generation: everything the builder renders is derived
// from GET /schemas at load time, never from knowledge of specific plugins.

import type {
  AttributeDescriptor,
  PluginSchema,
  SchemasDocument,
  ValueType,
} from "./types.js";

export type WidgetKind = "text" | "number" | "checkbox" | "list" | "map";

export interface FieldModel {
  name: string;
  label: string;
  kind: WidgetKind;
  valueType: ValueType;
  readOnly: boolean;
  doc: string; // rendered as the tooltip
  initial: string | boolean;
  integer: boolean;
}

export interface FormModel {
  plugin: string;
  category: string;
  doc: string;
  fields: FieldModel[];
}

export class FieldError extends Error {
  constructor(public field: string, message: string) {
    super(message);
  }
}

export function widgetKind(valueType: ValueType): WidgetKind {
  switch (valueType) {
    case "integer":
    case "float":
      return "number";
    case "boolean":
      return "checkbox";
    case "string_list":
      return "list";
    case "string_map":
      return "map";
    default:
      return "text";
  }
}

export function formatInitial(attr: AttributeDescriptor): string | boolean {
  const value = attr.default;
  switch (attr.value_type) {
    case "boolean":
      return Boolean(value);
    case "string_list":
      return Array.isArray(value) ? value.join("\n") : "";
    case "string_map":
      return value && typeof value === "object"
        ? Object.entries(value as Record<string, string>)
            .map(([k, v]) => `${k}=${v}`)
            .join("\n")
        : "";
    case "integer":
    case "float":
      return value === null || value === undefined ? "" : String(value);
    default:
      return value === null || value === undefined ? "" : String(value);
  }
}

export function buildFormModel(schema: PluginSchema): FormModel {
  return {
    plugin: schema.name,
    category: schema.category,
    doc: schema.doc,
    fields: schema.attributes.map((attr) => ({
      name: attr.name,
      label: attr.name,
      kind: widgetKind(attr.value_type),
      valueType: attr.value_type,
      readOnly: attr.access === "read_only",
      doc: attr.doc,
      initial: formatInitial(attr),
      integer: attr.value_type === "integer",
    })),
  };
}

export function parseFieldValue(
  field: FieldModel,
  raw: string | boolean,
): unknown {
  switch (field.valueType) {
    case "boolean":
      return Boolean(raw);
    case "integer": {
      const text = String(raw).trim();
      if (text === "") return 0;
      if (!/^-?\d+$/.test(text)) {
        throw new FieldError(field.name, `${field.name} must be an integer`);
      }
      return parseInt(text, 10);
    }
    case "float": {
      const text = String(raw).trim();
      if (text === "") return 0.0;
      const value = Number(text);
      if (Number.isNaN(value)) {
        throw new FieldError(field.name, `${field.name} must be a number`);
      }
      return value;
    }
    case "string_list":
      return String(raw)
        .split("\n")
        .map((line) => line.trim())
        .filter((line) => line.length > 0);
    case "string_map": {
      const map: Record<string, string> = {};
      for (const line of String(raw).split("\n")) {
        const trimmed = line.trim();
        if (!trimmed) continue;
        const eq = trimmed.indexOf("=");
        if (eq < 1) {
          throw new FieldError(
            field.name,
            `${field.name}: expected KEY=VALUE, got "${trimmed}"`,
          );
        }
        map[trimmed.slice(0, eq)] = trimmed.slice(eq + 1);
      }
      return map;
    }
    default:
      return String(raw);
  }
}

// Assemble the component document {type, ...writable attributes} for POST /jobs.
export function buildComponentDocument(
  model: FormModel,
  values: Record<string, string | boolean>,
): Record<string, unknown> {
  const doc: Record<string, unknown> = { type: model.plugin };
  for (const field of model.fields) {
    if (field.readOnly) continue;
    const raw = values[field.name] ?? field.initial;
    doc[field.name] = parseFieldValue(field, raw);
  }
  return doc;
}

export interface BuilderSelection {
  application: string;
  backend: string;
  dataset?: string;
  splitter?: string;
  merger?: string;
}

export function pluginsByName(
  schemas: SchemasDocument,
): Map<string, PluginSchema> {
  const map = new Map<string, PluginSchema>();
  for (const group of Object.values(schemas)) {
    for (const schema of group as PluginSchema[]) {
      map.set(schema.name, schema);
    }
  }
  return map;
}
