/** Fetch-based clients for the documented hub and meta-hub REST routes. */

import type {
  AppCatalogEntry,
  AppPackage,
  AppStatus,
  CatalogEntry,
  EnablerDescriptor,
  FeedDescriptor,
  PipeSpec,
  Sample,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    readonly detail: string,
    readonly operator: string | null = null,
  ) {
    super(`${code} (${status}): ${detail}`);
  }
}

async function request<T>(url: string, init: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  const text = await response.text();
  let payload: unknown = null;
  if (text) {
    try {
      payload = JSON.parse(text);
    } catch {
      payload = null;
    }
  }
  if (!response.ok) {
    const body = (payload ?? {}) as Record<string, unknown>;
    throw new ApiError(
      response.status,
      typeof body["error"] === "string" ? (body["error"] as string) : "error",
      typeof body["detail"] === "string" ? (body["detail"] as string) : text.slice(0, 200),
      typeof body["operator"] === "string" ? (body["operator"] as string) : null,
    );
  }
  return payload as T;
}

export class HubClient {
  constructor(readonly baseUri: string, readonly token: string) {}

  private headers(): Record<string, string> {
    return { Authorization: `Bearer ${this.token}`, "Content-Type": "application/json" };
  }

  private get<T>(path: string): Promise<T> {
    return request<T>(this.baseUri + path, { headers: this.headers() });
  }

  private send<T>(method: string, path: string, payload?: unknown): Promise<T> {
    return request<T>(this.baseUri + path, {
      method,
      headers: this.headers(),
      body: payload === undefined ? undefined : JSON.stringify(payload),
    });
  }

  listFeeds(): Promise<FeedDescriptor[]> {
    return this.get("/feeds");
  }

  getFeed(id: string): Promise<FeedDescriptor> {
    return this.get(`/feeds/${encodeURIComponent(id)}`);
  }

  createFeed(descriptor: FeedDescriptor): Promise<FeedDescriptor> {
    return this.send("POST", "/feeds", descriptor);
  }

  deleteFeed(id: string): Promise<void> {
    return this.send("DELETE", `/feeds/${encodeURIComponent(id)}`);
  }

  queryData(id: string, opts: { from?: number; to?: number; limit?: number } = {}): Promise<Sample[]> {
    const params = new URLSearchParams();
    if (opts.from !== undefined) params.set("from", String(opts.from));
    if (opts.to !== undefined) params.set("to", String(opts.to));
    if (opts.limit !== undefined) params.set("limit", String(opts.limit));
    const qs = params.toString();
    return this.get(`/feeds/${encodeURIComponent(id)}/data${qs ? "?" + qs : ""}`);
  }

  latest(id: string): Promise<Sample | null> {
    return this.get(`/feeds/${encodeURIComponent(id)}/latest`);
  }

  publishData(id: string, values: Record<string, unknown>, t_ms?: number): Promise<Sample> {
    return this.send("POST", `/feeds/${encodeURIComponent(id)}/data`, { values, ...(t_ms !== undefined ? { t_ms } : {}) });
  }

  sendCommand(id: string, command: "toggle" | "set", on?: boolean): Promise<{ feed_id: string; on: boolean }> {
    return this.send("POST", `/feeds/${encodeURIComponent(id)}/commands`, { command, ...(on !== undefined ? { on } : {}) });
  }

  createPipe(pipe: PipeSpec): Promise<FeedDescriptor> {
    return this.send("POST", "/pipes", pipe);
  }

  listEnablers(): Promise<EnablerDescriptor[]> {
    return this.get("/enablers");
  }

  instantiateEnabler(id: string, config: Record<string, unknown>): Promise<{ feed_ids: string[] }> {
    return this.send("POST", `/enablers/${encodeURIComponent(id)}/instances`, config);
  }

  installApp(pkg: AppPackage): Promise<AppStatus> {
    return this.send("POST", "/apps", pkg);
  }

  startApp(id: string): Promise<AppStatus> {
    return this.send("POST", `/apps/${encodeURIComponent(id)}/start`);
  }

  stopApp(id: string): Promise<AppStatus> {
    return this.send("POST", `/apps/${encodeURIComponent(id)}/stop`);
  }

  appStatus(id: string): Promise<AppStatus> {
    return this.get(`/apps/${encodeURIComponent(id)}/status`);
  }

  listApps(): Promise<AppStatus[]> {
    return this.get("/apps");
  }

  publishToMetahub(feedId: string, metahubUrl: string): Promise<unknown> {
    return this.send("POST", "/publications", { feed_id: feedId, metahub_url: metahubUrl });
  }

  streamUrl(id: string): string {
    return `${this.baseUri}/feeds/${encodeURIComponent(id)}/stream`;
  }
}

export class MetahubClient {
  constructor(readonly baseUri: string, readonly hubId: string | null = null) {}

  private headers(): Record<string, string> {
    return this.hubId ? { "X-Hub-Id": this.hubId } : {};
  }

  searchFeeds(opts: {
    q?: string;
    aggregationClass?: string;
    lat?: number;
    lon?: number;
    k?: number;
    max?: number;
  }): Promise<CatalogEntry[]> {
    const params = new URLSearchParams();
    if (opts.q) params.set("q", opts.q);
    if (opts.aggregationClass) params.set("class", opts.aggregationClass);
    if (opts.lat !== undefined) params.set("lat", String(opts.lat));
    if (opts.lon !== undefined) params.set("lon", String(opts.lon));
    if (opts.k !== undefined) params.set("k", String(opts.k));
    if (opts.max !== undefined) params.set("max", String(opts.max));
    const qs = params.toString();
    return request(`${this.baseUri}/catalog/feeds${qs ? "?" + qs : ""}`, { headers: this.headers() });
  }

  listApps(): Promise<AppCatalogEntry[]> {
    return request(`${this.baseUri}/catalog/apps`, { headers: this.headers() });
  }

  fetchApp(appId: string, version: string): Promise<AppCatalogEntry> {
    return request(
      `${this.baseUri}/catalog/apps/${encodeURIComponent(appId)}/${encodeURIComponent(version)}`,
      { headers: this.headers() },
    );
  }
}
