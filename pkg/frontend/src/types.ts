/** Wire types matching the hub and meta-hub canonical JSON serialization. */

export type ValueKind = "decimal" | "integer" | "boolean" | "text" | "geo_point" | "timestamp";
export type FeedKind = "atomic_sensor" | "atomic_actuator" | "time_series" | "derived";
export type Scope = "private" | "hub" | "global";

export interface SemanticType {
  id: string;
  value_kind: ValueKind;
  unit: string | null;
  aggregation_class: string;
}

export interface FieldDescriptor {
  name: string;
  semantic_type: SemanticType;
  access_mode: "live" | "stored";
  keywords: string[];
}

export interface Operator {
  id: string;
  kind: "filter" | "aggregate_window" | "resample" | "sliding_delta" | "anonymize_location";
  params: Record<string, unknown>;
  inputs: string[];
}

export interface PipeSpec {
  sources: string[];
  operators: Operator[];
  sink: string | null;
}

export interface FeedDescriptor {
  id: string;
  kind: FeedKind;
  fields: FieldDescriptor[];
  scope: Scope;
  keywords: string[];
  dependencies: string[];
  pipe: PipeSpec | null;
  created_at: number;
  owner: string;
}

export interface Sample {
  feed_id: string;
  seq: number;
  t_ms: number;
  values: Record<string, unknown>;
}

export interface AppStatus {
  app_id: string;
  state: "installed" | "unsatisfied" | "running" | "stopped" | "failed";
  bound_feeds: Record<string, string>;
  fire_count: number;
  last_fired_ms: number | null;
  missing: string[];
  diagnostic: string | null;
}

export interface AppPackage {
  app_id: string;
  name: string;
  version: string;
  requires: { aggregation_class: string; kind: FeedKind }[];
  pipes: PipeSpec[];
  rules: unknown[];
  params: Record<string, unknown>;
}

export interface CatalogEntry {
  hub_id: string;
  base_uri: string;
  descriptor: FeedDescriptor;
  descriptor_hash: string;
  position: { lat: number; lon: number } | null;
  accuracy: number | null;
  latency_ms: number | null;
  published_at: number;
}

export interface AppCatalogEntry {
  app_id: string;
  name: string;
  version: string;
  package: AppPackage;
  keywords: string[];
  published_at: number;
}

export interface EnablerDescriptor {
  id: string;
  device_class: string;
  config_schema: Record<string, string>;
  produces: FeedDescriptor[];
}

export interface UiSession {
  hubBaseUri: string;
  /** Bearer token; kept in memory only, never persisted. */
  token: string;
  metahubBaseUri: string | null;
}
