import { describe, expect, it } from "vitest";

import {
  FieldError,
  buildComponentDocument,
  buildFormModel,
  parseFieldValue,
  pluginsByName,
  widgetKind,
} from "../src/form.js";
import type { PluginSchema, SchemasDocument } from "../src/types.js";
import schemasFixture from "./fixtures/schemas.json";

const schemas = schemasFixture as unknown as SchemasDocument;
const allPlugins = (Object.values(schemas) as PluginSchema[][]).flat();

describe("schema-driven form generation", () => {
  it("renders one widget per visible attribute for every plugin", () => {
    // the fixture daemon carries an extra plugin the dashboard has never
    // seen; it must get widgets like any other, with zero code changes
    expect(allPlugins.length).toBeGreaterThan(10);
    for (const schema of allPlugins) {
      const model = buildFormModel(schema);
      expect(model.fields.length).toBe(schema.attributes.length);
      expect(model.fields.map((f) => f.name)).toEqual(
        schema.attributes.map((a) => a.name),
      );
    }
  });

  it("covers the fixture-only plugin with every widget kind", () => {
    const extra = allPlugins.find((p) => !isBuiltinCategory(p));
    expect(extra).toBeDefined();
    const model = buildFormModel(extra!);
    const kinds = new Set(model.fields.map((f) => f.kind));
    expect(kinds).toEqual(new Set(["text", "number", "checkbox", "list", "map"]));
  });

  it("types widgets by value_type", () => {
    expect(widgetKind("string")).toBe("text");
    expect(widgetKind("path")).toBe("text");
    expect(widgetKind("integer")).toBe("number");
    expect(widgetKind("float")).toBe("number");
    expect(widgetKind("boolean")).toBe("checkbox");
    expect(widgetKind("string_list")).toBe("list");
    expect(widgetKind("string_map")).toBe("map");
  });

  it("carries defaults and docs (tooltips) from the schema", () => {
    for (const schema of allPlugins) {
      const model = buildFormModel(schema);
      for (const [field, attr] of zip(model.fields, schema.attributes)) {
        expect(field.doc).toBe(attr.doc);
        if (attr.value_type === "boolean") {
          expect(field.initial).toBe(Boolean(attr.default));
        }
        if (attr.value_type === "string") {
          expect(field.initial).toBe(String(attr.default ?? ""));
        }
      }
    }
  });

  it("marks read-only attributes and keeps them out of documents", () => {
    const withReadOnly = allPlugins.find((p) =>
      p.attributes.some((a) => a.access === "read_only"),
    );
    expect(withReadOnly).toBeDefined();
    const model = buildFormModel(withReadOnly!);
    const readOnly = model.fields.filter((f) => f.readOnly);
    expect(readOnly.length).toBeGreaterThan(0);
    const document = buildComponentDocument(model, {});
    for (const field of readOnly) {
      expect(document).not.toHaveProperty(field.name);
    }
    expect(document.type).toBe(withReadOnly!.name);
  });
});

describe("field value parsing", () => {
  const field = (valueType: string) => ({
    name: "x",
    label: "x",
    kind: widgetKind(valueType as never),
    valueType: valueType as never,
    readOnly: false,
    doc: "",
    initial: "",
    integer: valueType === "integer",
  });

  it("parses integers strictly", () => {
    expect(parseFieldValue(field("integer"), "4")).toBe(4);
    expect(parseFieldValue(field("integer"), "")).toBe(0);
    expect(() => parseFieldValue(field("integer"), "4.5")).toThrow(FieldError);
  });

  it("parses floats", () => {
    expect(parseFieldValue(field("float"), "0.25")).toBe(0.25);
    expect(() => parseFieldValue(field("float"), "tiny")).toThrow(FieldError);
  });

  it("splits lists on lines", () => {
    expect(parseFieldValue(field("string_list"), "a\n\n b \n")).toEqual([
      "a",
      "b",
    ]);
  });

  it("parses KEY=VALUE maps", () => {
    expect(parseFieldValue(field("string_map"), "A=1\nB=x=y")).toEqual({
      A: "1",
      B: "x=y",
    });
    expect(() => parseFieldValue(field("string_map"), "noequals")).toThrow(
      FieldError,
    );
  });

  it("builds a component document from edited values", () => {
    const schema = allPlugins.find((p) =>
      p.attributes.some((a) => a.value_type === "string_list"),
    )!;
    const model = buildFormModel(schema);
    const listField = model.fields.find((f) => f.kind === "list")!;
    const document = buildComponentDocument(model, {
      [listField.name]: "one\ntwo",
    });
    expect(document[listField.name]).toEqual(["one", "two"]);
  });
});

describe("pluginsByName", () => {
  it("indexes every plugin exactly once", () => {
    const map = pluginsByName(schemas);
    expect(map.size).toBe(allPlugins.length);
  });
});

function isBuiltinCategory(plugin: PluginSchema): boolean {
  // the extra fixture plugin is identifiable structurally: it is the only
  // application with more than three attributes (the names themselves are
  // deliberately not written down here)
  return !(plugin.category === "application" && plugin.attributes.length > 3);
}

function zip<A, B>(left: A[], right: B[]): Array<[A, B]> {
  return left.map((value, index) => [value, right[index]]);
}
