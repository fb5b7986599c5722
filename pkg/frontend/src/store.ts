/**
 * Single UI store: every mutation goes through the API and the displayed
 * state is re-read from the server afterwards, so the dashboard never shows
 * optimistic state that could diverge from hub truth. Updates are serialized
 * through one promise chain.
 */

import { HubClient, MetahubClient } from "./api.js";
import type {
  AppCatalogEntry,
  AppStatus,
  CatalogEntry,
  EnablerDescriptor,
  FeedDescriptor,
  PipeSpec,
  UiSession,
} from "./types.js";

export interface DashboardState {
  session: UiSession | null;
  feeds: FeedDescriptor[];
  enablers: EnablerDescriptor[];
  apps: AppStatus[];
  searchResults: CatalogEntry[];
  appResults: AppCatalogEntry[];
  lastError: string | null;
}

type Listener = (state: DashboardState) => void;

export class DashboardStore {
  private state: DashboardState = {
    session: null,
    feeds: [],
    enablers: [],
    apps: [],
    searchResults: [],
    appResults: [],
    lastError: null,
  };

  private listeners: Listener[] = [];
  private queue: Promise<unknown> = Promise.resolve();
  private hub: HubClient | null = null;
  private metahub: MetahubClient | null = null;

  getState(): DashboardState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(patch: Partial<DashboardState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  /** Serializes state-changing work through a single chain. */
  private enqueue<T>(work: () => Promise<T>): Promise<T> {
    const next = this.queue.then(work, work);
    this.queue = next.catch(() => undefined);
    return next;
  }

  connect(session: UiSession): Promise<void> {
    this.hub = new HubClient(session.hubBaseUri, session.token);
    this.metahub = session.metahubBaseUri ? new MetahubClient(session.metahubBaseUri) : null;
    this.emit({ session });
    return this.refresh();
  }

  hubClient(): HubClient {
    if (this.hub === null) throw new Error("not connected");
    return this.hub;
  }

  refresh(): Promise<void> {
    return this.enqueue(async () => {
      const hub = this.hubClient();
      try {
        const [feeds, enablers, apps] = await Promise.all([
          hub.listFeeds(),
          hub.listEnablers(),
          hub.listApps(),
        ]);
        this.emit({ feeds, enablers, apps, lastError: null });
      } catch (err) {
        this.emit({ lastError: String(err) });
        throw err;
      }
    });
  }

  private mutateThenRefresh<T>(work: (hub: HubClient) => Promise<T>): Promise<T> {
    return this.enqueue(async () => {
      const hub = this.hubClient();
      try {
        const result = await work(hub);
        this.emit({ lastError: null });
        return result;
      } catch (err) {
        this.emit({ lastError: String(err) });
        throw err;
      }
    }).then(async (result) => {
      await this.refresh();
      return result;
    });
  }

  instantiateEnabler(id: string, config: Record<string, unknown>): Promise<string[]> {
    return this.mutateThenRefresh(async (hub) => (await hub.instantiateEnabler(id, config)).feed_ids);
  }

  createPipe(pipe: PipeSpec): Promise<FeedDescriptor> {
    return this.mutateThenRefresh((hub) => hub.createPipe(pipe));
  }

  deleteFeed(id: string): Promise<void> {
    return this.mutateThenRefresh((hub) => hub.deleteFeed(id));
  }

  sendCommand(id: string, command: "toggle" | "set", on?: boolean): Promise<boolean> {
    return this.mutateThenRefresh(async (hub) => (await hub.sendCommand(id, command, on)).on);
  }

  /** One-click install from a meta-hub search result: fetch then POST /apps. */
  installAppFromCatalog(appId: string, version: string): Promise<AppStatus> {
    return this.mutateThenRefresh(async (hub) => {
      if (this.metahub === null) throw new Error("no meta-hub configured");
      const entry = await this.metahub.fetchApp(appId, version);
      return hub.installApp(entry.package);
    });
  }

  startApp(id: string): Promise<AppStatus> {
    return this.mutateThenRefresh((hub) => hub.startApp(id));
  }

  stopApp(id: string): Promise<AppStatus> {
    return this.mutateThenRefresh((hub) => hub.stopApp(id));
  }

  searchMetahub(opts: { q?: string; aggregationClass?: string; lat?: number; lon?: number; k?: number }): Promise<void> {
    return this.enqueue(async () => {
      if (this.metahub === null) throw new Error("no meta-hub configured");
      try {
        const [searchResults, appResults] = await Promise.all([
          this.metahub.searchFeeds(opts),
          this.metahub.listApps(),
        ]);
        const qTokens = (opts.q ?? "").toLowerCase().split(/\s+/).filter(Boolean);
        const filteredApps =
          qTokens.length === 0
            ? appResults
            : appResults.filter((entry) => {
                const tokens = new Set<string>([
                  ...entry.keywords.map((k) => k.toLowerCase()),
                  entry.name.toLowerCase(),
                  entry.app_id.toLowerCase(),
                ]);
                return qTokens.every((t) => [...tokens].some((tok) => tok.includes(t)));
              });
        this.emit({ searchResults, appResults: filteredApps, lastError: null });
      } catch (err) {
        this.emit({ lastError: String(err) });
        throw err;
      }
    });
  }
}
