import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import { compatibleTypes, validatePipe, valueMatchesKind } from "../src/pipeValidation.js";
import type { FeedDescriptor, PipeSpec, SemanticType } from "../src/types.js";

const here = dirname(fileURLToPath(import.meta.url));
const vectorsPath = join(here, "..", "..", "shared", "pipe-vectors.json");

interface Vector {
  name: string;
  inputs: FeedDescriptor[];
  pipe: PipeSpec;
  valid: boolean;
}

const vectors: Vector[] = JSON.parse(readFileSync(vectorsPath, "utf-8")).vectors;

describe("shared pipe vectors", () => {
  it("has the agreed shape", () => {
    expect(vectors).toHaveLength(20);
    expect(vectors.filter((v) => v.valid)).toHaveLength(10);
  });

  for (const vector of vectors) {
    it(`matches the server verdict for ${vector.name}`, () => {
      const verdict = validatePipe(vector.pipe, vector.inputs);
      expect(verdict.valid, verdict.issues.map((i) => i.message).join("; ")).toBe(vector.valid);
    });
  }

  it("agrees on all twenty vectors", () => {
    const agreements = vectors.filter((v) => validatePipe(v.pipe, v.inputs).valid === v.valid);
    expect(agreements).toHaveLength(20);
  });
});

describe("compatibleTypes", () => {
  const st = (cls: string, kind: SemanticType["value_kind"], unit: string | null): SemanticType => ({
    id: cls,
    value_kind: kind,
    unit,
    aggregation_class: cls,
  });

  it("rejects cross-class pairs even with identical kinds", () => {
    expect(compatibleTypes(st("temperature", "decimal", "celsius"), st("relative_humidity", "decimal", "percent"))).toBe(false);
  });

  it("accepts same class and unit", () => {
    expect(compatibleTypes(st("acceleration", "decimal", "m_per_s2"), st("acceleration", "decimal", "m_per_s2"))).toBe(true);
  });

  it("accepts celsius/kelvin through the conversion registry", () => {
    expect(compatibleTypes(st("temperature", "decimal", "celsius"), st("temperature", "decimal", "kelvin"))).toBe(true);
    expect(compatibleTypes(st("temperature", "decimal", "kelvin"), st("temperature", "decimal", "celsius"))).toBe(true);
  });

  it("rejects unregistered unit pairs", () => {
    expect(compatibleTypes(st("temperature", "decimal", "celsius"), st("temperature", "decimal", "fahrenheit"))).toBe(false);
  });
});

describe("valueMatchesKind", () => {
  it("checks geo_point shape and ranges", () => {
    expect(valueMatchesKind({ lat: 60, lon: 24 }, "geo_point")).toBe(true);
    expect(valueMatchesKind({ lat: 91, lon: 24 }, "geo_point")).toBe(false);
    expect(valueMatchesKind({ lat: 60 }, "geo_point")).toBe(false);
  });

  it("separates integers from decimals", () => {
    expect(valueMatchesKind(1.5, "integer")).toBe(false);
    expect(valueMatchesKind(2, "integer")).toBe(true);
    expect(valueMatchesKind(1.5, "decimal")).toBe(true);
  });
});

describe("composer feedback", () => {
  it("reports the offending operator id", () => {
    const vector = vectors.find((v) => v.name === "class-mix-aggregate")!;
    const verdict = validatePipe(vector.pipe, vector.inputs);
    expect(verdict.valid).toBe(false);
    expect(verdict.issues[0].operator).toBe("agg");
  });

  it("exposes the synthesized output schema on success", () => {
    const vector = vectors.find((v) => v.name === "sum-then-delta")!;
    const verdict = validatePipe(vector.pipe, vector.inputs);
    expect(verdict.valid).toBe(true);
    expect(verdict.outputFields?.map((f) => f.name)).toEqual(["force"]);
  });
});
