/**
 * Client-side mirror of the hub's pipe type checker.
 *
 * Used for instant feedback in the composer; the server remains authoritative.
 * The verdict must agree with the server on type grounds: the shared vector
 * file in ../shared/pipe-vectors.json pins that contract for both sides.
 */

import type { FeedDescriptor, FieldDescriptor, Operator, PipeSpec, SemanticType, ValueKind } from "./types.js";

export interface PipeIssue {
  operator: string | null;
  message: string;
}

export interface PipeVerdict {
  valid: boolean;
  issues: PipeIssue[];
  outputFields: FieldDescriptor[] | null;
}

const AGGREGATE_FNS = new Set(["min", "max", "mean", "sum", "count", "magnitude"]);
const RESAMPLE_STRATEGIES = new Set(["mean", "last"]);
const FILTER_OPS = new Set(["<", "<=", "=", ">=", ">", "!="]);
const ORDERING_OPS = new Set(["<", "<=", ">=", ">"]);
const ORDERABLE_KINDS = new Set<ValueKind>(["decimal", "integer", "text", "timestamp"]);
const NUMERIC_KINDS = new Set<ValueKind>(["decimal", "integer"]);
const UNIT_CONVERSIONS = [["celsius", "kelvin"]];

function fail(operator: string | null, message: string): PipeVerdict {
  return { valid: false, issues: [{ operator, message }], outputFields: null };
}

function hasConversion(a: string | null, b: string | null): boolean {
  if (a === null || b === null) return false;
  return UNIT_CONVERSIONS.some(([u, v]) => (u === a && v === b) || (u === b && v === a));
}

export function compatibleTypes(a: SemanticType, b: SemanticType): boolean {
  if (a.aggregation_class !== b.aggregation_class) return false;
  if (a.value_kind !== b.value_kind) return false;
  if (a.unit === b.unit) return true;
  return hasConversion(a.unit, b.unit);
}

function isInt(value: unknown): value is number {
  return typeof value === "number" && Number.isInteger(value);
}

export function valueMatchesKind(value: unknown, kind: ValueKind): boolean {
  switch (kind) {
    case "decimal":
      return typeof value === "number" && Number.isFinite(value);
    case "integer":
    case "timestamp":
      return isInt(value);
    case "boolean":
      return typeof value === "boolean";
    case "text":
      return typeof value === "string";
    case "geo_point": {
      if (typeof value !== "object" || value === null || Array.isArray(value)) return false;
      const keys = Object.keys(value as Record<string, unknown>).sort();
      if (keys.length !== 2 || keys[0] !== "lat" || keys[1] !== "lon") return false;
      const { lat, lon } = value as { lat: unknown; lon: unknown };
      return (
        typeof lat === "number" && Number.isFinite(lat) && lat >= -90 && lat <= 90 &&
        typeof lon === "number" && Number.isFinite(lon) && lon >= -180 && lon <= 180
      );
    }
  }
}

function findField(schema: FieldDescriptor[], name: string): FieldDescriptor | undefined {
  return schema.find((f) => f.name === name);
}

type Schemas = Map<string, FieldDescriptor[]>;

export function validatePipe(pipe: PipeSpec, inputs: FeedDescriptor[]): PipeVerdict {
  if (pipe.sources.length === 0) return fail(null, "pipe requires at least one source");
  if (inputs.length !== pipe.sources.length) {
    return fail(null, `pipe declares ${pipe.sources.length} sources, got ${inputs.length} inputs`);
  }

  const schemas: Schemas = new Map();
  inputs.forEach((desc, i) => schemas.set(`source:${i}`, desc.fields));

  if (pipe.operators.length === 0) {
    if (pipe.sources.length !== 1) return fail(null, "a pipe without operators must have exactly one source");
    if (pipe.sink !== null && pipe.sink !== undefined) return fail(null, "sink references an operator but the pipe has none");
    return { valid: true, issues: [], outputFields: inputs[0].fields };
  }

  const byId = new Map<string, Operator>();
  for (const op of pipe.operators) {
    if (byId.has(op.id)) return fail(op.id, `duplicate operator id '${op.id}'`);
    if (op.id.startsWith("source:")) return fail(op.id, `operator id '${op.id}' shadows a source reference`);
    byId.set(op.id, op);
  }

  const consumed = new Set<string>();
  for (const op of pipe.operators) {
    if (op.inputs.length === 0) return fail(op.id, "operator declares no inputs");
    for (const ref of op.inputs) {
      if (ref.startsWith("source:")) {
        if (!schemas.has(ref)) return fail(op.id, `unknown source reference '${ref}'`);
      } else if (!byId.has(ref)) {
        return fail(op.id, `unknown operator reference '${ref}'`);
      }
      consumed.add(ref);
    }
  }
  for (let i = 0; i < pipe.sources.length; i++) {
    if (!consumed.has(`source:${i}`)) return fail(null, `source:${i} is never consumed`);
  }

  const terminals = pipe.operators.filter((op) => !consumed.has(op.id)).map((op) => op.id);
  if (terminals.length !== 1) {
    return fail(null, `pipe must have exactly one terminal operator, found [${terminals.join(", ")}]`);
  }
  const terminal = terminals[0];
  if (pipe.sink !== null && pipe.sink !== undefined && pipe.sink !== terminal) {
    return fail(null, `declared sink '${pipe.sink}' is not the terminal operator '${terminal}'`);
  }

  // Topological order; anything left over is a cycle.
  const ordered: Operator[] = [];
  const placed = new Set<string>();
  const remaining = new Map(byId);
  while (remaining.size > 0) {
    let progressed = false;
    for (const [id, op] of [...remaining]) {
      if (op.inputs.every((ref) => ref.startsWith("source:") || placed.has(ref))) {
        ordered.push(op);
        placed.add(id);
        remaining.delete(id);
        progressed = true;
      }
    }
    if (!progressed) {
      return fail(null, `operator graph contains a cycle among [${[...remaining.keys()].sort().join(", ")}]`);
    }
  }

  for (const op of ordered) {
    const verdict = checkOperator(op, schemas);
    if (verdict !== null) return verdict;
  }
  return { valid: true, issues: [], outputFields: schemas.get(terminal) ?? null };
}

/** Returns a failing verdict, or null after recording the operator's output schema. */
function checkOperator(op: Operator, schemas: Schemas): PipeVerdict | null {
  if (op.kind !== "aggregate_window" && op.inputs.length !== 1) {
    return fail(op.id, `${op.kind} takes exactly one input`);
  }
  switch (op.kind) {
    case "filter":
      return checkFilter(op, schemas);
    case "aggregate_window":
      return checkAggregate(op, schemas);
    case "resample":
      return checkResample(op, schemas);
    case "sliding_delta":
      return checkDelta(op, schemas);
    case "anonymize_location":
      return checkAnonymize(op, schemas);
    default:
      return fail((op as Operator).id, `unknown operator kind '${(op as Operator).kind}'`);
  }
}

function checkFilter(op: Operator, schemas: Schemas): PipeVerdict | null {
  const field = op.params["field"];
  const cmp = op.params["op"];
  if (typeof field !== "string") return fail(op.id, "filter requires a 'field' parameter");
  if (typeof cmp !== "string" || !FILTER_OPS.has(cmp)) {
    return fail(op.id, "filter op must be one of <, <=, =, >=, >, !=");
  }
  if (!("value" in op.params)) return fail(op.id, "filter requires a 'value' parameter");
  const schema = schemas.get(op.inputs[0])!;
  const fd = findField(schema, field);
  if (!fd) return fail(op.id, `field '${field}' not present on input`);
  const kind = fd.semantic_type.value_kind;
  if (!valueMatchesKind(op.params["value"], kind)) {
    return fail(op.id, `filter constant does not match field kind ${kind}`);
  }
  if (ORDERING_OPS.has(cmp) && !ORDERABLE_KINDS.has(kind)) {
    return fail(op.id, `ordering comparison not defined for kind ${kind}`);
  }
  schemas.set(op.id, schema);
  return null;
}

function checkAggregate(op: Operator, schemas: Schemas): PipeVerdict | null {
  const fn = op.params["fn"];
  const names = op.params["fields"];
  const windowMs = op.params["window_ms"] ?? 0;
  if (typeof fn !== "string" || !AGGREGATE_FNS.has(fn)) {
    return fail(op.id, "aggregate fn must be one of min, max, mean, sum, count, magnitude");
  }
  if (!Array.isArray(names) || names.length === 0 || !names.every((n) => typeof n === "string")) {
    return fail(op.id, "aggregate requires a nonempty 'fields' list");
  }
  if (!isInt(windowMs) || (windowMs as number) < 0) {
    return fail(op.id, "aggregate window_ms must be a non-negative integer");
  }

  const typed: { name: string; st: SemanticType }[] = [];
  for (const ref of op.inputs) {
    const schema = schemas.get(ref)!;
    for (const name of names as string[]) {
      const fd = findField(schema, name);
      if (!fd) return fail(op.id, `field '${name}' not present on input`);
      typed.push({ name, st: fd.semantic_type });
    }
  }
  for (let i = 0; i < typed.length; i++) {
    for (let j = i + 1; j < typed.length; j++) {
      if (!compatibleTypes(typed[i].st, typed[j].st)) {
        return fail(op.id, `fields '${typed[i].name}' and '${typed[j].name}' have incompatible aggregation classes`);
      }
    }
  }
  if (fn !== "count") {
    for (const { name, st } of typed) {
      if (!NUMERIC_KINDS.has(st.value_kind)) {
        return fail(op.id, `aggregate(${fn}) requires numeric fields, '${name}' is ${st.value_kind}`);
      }
    }
  }

  const cls = typed[0].st.aggregation_class;
  const unit = typed[0].st.unit;
  let outType: SemanticType;
  if (fn === "count") {
    outType = { id: `count_${cls}`, value_kind: "integer", unit: null, aggregation_class: "generic_count" };
  } else if (fn === "mean" || fn === "magnitude") {
    outType = { id: `${fn}_${cls}`, value_kind: "decimal", unit, aggregation_class: cls };
  } else {
    const kind = typed.some(({ st }) => st.value_kind === "decimal") ? "decimal" : "integer";
    outType = { id: `${fn}_${cls}`, value_kind: kind, unit, aggregation_class: cls };
  }
  schemas.set(op.id, [{ name: `${fn}_${cls}`, semantic_type: outType, access_mode: "stored", keywords: [] }]);
  return null;
}

function checkResample(op: Operator, schemas: Schemas): PipeVerdict | null {
  const periodMs = op.params["period_ms"];
  const strategy = op.params["strategy"] ?? "mean";
  const sourcePeriodMs = op.params["source_period_ms"];
  if (!isInt(periodMs) || (periodMs as number) < 1) {
    return fail(op.id, "resample period_ms must be a positive integer");
  }
  if (typeof strategy !== "string" || !RESAMPLE_STRATEGIES.has(strategy)) {
    return fail(op.id, "resample strategy must be one of mean, last");
  }
  if (sourcePeriodMs !== undefined && sourcePeriodMs !== null) {
    if (!isInt(sourcePeriodMs) || (sourcePeriodMs as number) < 1) {
      return fail(op.id, "resample source_period_ms must be a positive integer");
    }
    if ((periodMs as number) < (sourcePeriodMs as number)) {
      return fail(op.id, `resample period ${periodMs}ms is below the source period ${sourcePeriodMs}ms (upsampling unsupported)`);
    }
  }
  const schema = schemas.get(op.inputs[0])!;
  const out = schema.map((fd) => {
    const numericMean = strategy === "mean" && NUMERIC_KINDS.has(fd.semantic_type.value_kind);
    return {
      ...fd,
      access_mode: "stored" as const,
      semantic_type: numericMean ? { ...fd.semantic_type, value_kind: "decimal" as const } : fd.semantic_type,
    };
  });
  schemas.set(op.id, out);
  return null;
}

function checkDelta(op: Operator, schemas: Schemas): PipeVerdict | null {
  const field = op.params["field"];
  if (typeof field !== "string") return fail(op.id, "sliding_delta requires a 'field' parameter");
  const schema = schemas.get(op.inputs[0])!;
  const fd = findField(schema, field);
  if (!fd) return fail(op.id, `field '${field}' not present on input`);
  if (!NUMERIC_KINDS.has(fd.semantic_type.value_kind)) {
    return fail(op.id, `sliding_delta requires a numeric field, '${field}' is ${fd.semantic_type.value_kind}`);
  }
  schemas.set(op.id, [
    {
      name: "force",
      semantic_type: {
        id: "force",
        value_kind: "decimal",
        unit: fd.semantic_type.unit,
        aggregation_class: fd.semantic_type.aggregation_class,
      },
      access_mode: "stored",
      keywords: [],
    },
  ]);
  return null;
}

function checkAnonymize(op: Operator, schemas: Schemas): PipeVerdict | null {
  const schema = schemas.get(op.inputs[0])!;
  const geo = schema.filter((f) => f.semantic_type.value_kind === "geo_point");
  if (geo.length !== 1) return fail(op.id, "anonymize_location requires exactly one geo_point input field");
  const inline = op.params["table"];
  if (inline !== undefined && inline !== null) {
    if (!Array.isArray(inline)) return fail(op.id, "anonymize_location inline table must be a list");
    if (inline.length === 0) return fail(op.id, "anonymize_location inline table is empty");
  }
  schemas.set(op.id, [
    {
      name: "city",
      semantic_type: { id: "city", value_kind: "text", unit: null, aggregation_class: "location" },
      access_mode: "stored",
      keywords: [],
    },
  ]);
  return null;
}
