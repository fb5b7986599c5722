/** Dashboard entry point: connects panels to the store and the live stream. */

import { ApiError } from "./api.js";
import { buildChartModel, type EventMarker, type SeriesPoint } from "./chart.js";
import { validatePipe } from "./pipeValidation.js";
import { openSampleStream, type StreamHandle } from "./sse.js";
import { DashboardStore } from "./store.js";
import type { FeedDescriptor, Operator, PipeSpec, Sample } from "./types.js";

const store = new DashboardStore();
const DRAFT_KEY = "iothub.pipe.draft";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === "class") node.className = value;
    else node.setAttribute(key, value);
  }
  node.append(...children);
  return node;
}

function clear(node: HTMLElement): HTMLElement {
  node.textContent = "";
  return node;
}

// -- session ------------------------------------------------------------------

function renderLogin(root: HTMLElement): void {
  const hubInput = el("input", { value: window.location.origin, placeholder: "hub base URI" });
  const tokenInput = el("input", { placeholder: "bearer token", type: "password" });
  const metahubInput = el("input", { placeholder: "meta-hub base URI (optional)" });
  const message = el("p", { class: "error" });
  const button = el("button", {}, "Connect");
  button.addEventListener("click", async () => {
    try {
      await store.connect({
        hubBaseUri: hubInput.value.replace(/\/$/, ""),
        token: tokenInput.value.trim(),
        metahubBaseUri: metahubInput.value.trim() ? metahubInput.value.trim().replace(/\/$/, "") : null,
      });
      renderShell(root);
    } catch (err) {
      message.textContent = err instanceof ApiError ? `${err.code}: ${err.detail}` : String(err);
    }
  });
  clear(root).append(
    el("div", { class: "card login" },
      el("h1", {}, "IoT Hub Dashboard"),
      el("label", {}, "Hub", hubInput),
      el("label", {}, "Token", tokenInput),
      el("label", {}, "Meta-hub", metahubInput),
      button,
      message,
    ),
  );
}

// -- shell ---------------------------------------------------------------------

type Panel = "feeds" | "composer" | "live" | "search";
let activePanel: Panel = "feeds";

function renderShell(root: HTMLElement): void {
  const nav = el("nav", {});
  const body = el("main", {});
  const panels: [Panel, string][] = [
    ["feeds", "Feeds"],
    ["composer", "Pipe composer"],
    ["live", "Live view"],
    ["search", "Meta-hub search"],
  ];
  for (const [panel, label] of panels) {
    const button = el("button", { class: panel === activePanel ? "active" : "" }, label);
    button.addEventListener("click", () => {
      activePanel = panel;
      renderShell(root);
    });
    nav.append(button);
  }
  clear(root).append(el("header", {}, el("strong", {}, "iothub"), nav), body);

  if (activePanel === "feeds") renderFeeds(body);
  else if (activePanel === "composer") renderComposer(body);
  else if (activePanel === "live") renderLive(body);
  else renderSearch(body);
}

// -- feeds panel ------------------------------------------------------------------

function renderFeeds(body: HTMLElement): void {
  const state = store.getState();
  const table = el("table", { class: "feeds" });
  table.append(
    el("tr", {}, el("th", {}, "id"), el("th", {}, "kind"), el("th", {}, "scope"), el("th", {}, "fields"), el("th", {}, "")),
  );
  for (const feed of state.feeds) {
    const actions = el("td", {});
    if (feed.kind === "atomic_actuator") {
      const toggle = el("button", {}, "toggle");
      toggle.addEventListener("click", () => void store.sendCommand(feed.id, "toggle").then(() => renderFeeds(body)));
      actions.append(toggle);
    }
    const remove = el("button", { class: "danger" }, "delete");
    remove.addEventListener("click", () => void store.deleteFeed(feed.id).then(() => renderFeeds(body)).catch(() => renderFeeds(body)));
    actions.append(remove);
    table.append(
      el("tr", {},
        el("td", {}, feed.id),
        el("td", {}, el("span", { class: `badge kind-${feed.kind}` }, feed.kind)),
        el("td", {}, el("span", { class: `badge scope-${feed.scope}` }, feed.scope)),
        el("td", {}, feed.fields.map((f) => `${f.name}:${f.semantic_type.value_kind}`).join(", ")),
        actions,
      ),
    );
  }

  const enablerForms = el("div", { class: "enablers" }, el("h2", {}, "Enablers"));
  for (const enabler of store.getState().enablers) {
    const configInput = el("input", { placeholder: "{} config JSON", value: "{}" });
    const button = el("button", {}, `instantiate ${enabler.id}`);
    const note = el("span", { class: "error" });
    button.addEventListener("click", async () => {
      try {
        await store.instantiateEnabler(enabler.id, JSON.parse(configInput.value || "{}"));
        renderFeeds(body);
      } catch (err) {
        note.textContent = err instanceof ApiError ? `${err.code}: ${err.detail}` : String(err);
      }
    });
    enablerForms.append(el("div", { class: "row" }, button, configInput, note));
  }
  const errorLine = store.getState().lastError;
  clear(body).append(
    el("h2", {}, `Feeds (${state.feeds.length})`),
    errorLine ? el("p", { class: "error banner" }, errorLine) : "",
    table,
    enablerForms,
  );
}

// -- pipe composer -------------------------------------------------------------------

interface Draft {
  sources: string[];
  operators: Operator[];
}

function loadDraft(): Draft {
  try {
    const raw = window.localStorage.getItem(DRAFT_KEY);
    if (raw) return JSON.parse(raw) as Draft;
  } catch {
    /* fresh draft below */
  }
  return { sources: [], operators: [] };
}

function saveDraft(draft: Draft): void {
  window.localStorage.setItem(DRAFT_KEY, JSON.stringify(draft));
}

function draftPipe(draft: Draft): PipeSpec {
  const terminal = draft.operators.find((op) => !draft.operators.some((other) => other.inputs.includes(op.id)));
  return { sources: draft.sources, operators: draft.operators, sink: terminal ? terminal.id : null };
}

function renderComposer(body: HTMLElement): void {
  const draft = loadDraft();
  const feeds = store.getState().feeds;
  const byId = new Map(feeds.map((f) => [f.id, f]));

  const sourcePicker = el("select", {});
  sourcePicker.append(el("option", { value: "" }, "add source feed..."));
  for (const feed of feeds) sourcePicker.append(el("option", { value: feed.id }, feed.id));
  sourcePicker.addEventListener("change", () => {
    if (sourcePicker.value) {
      draft.sources.push(sourcePicker.value);
      saveDraft(draft);
      renderComposer(body);
    }
  });

  const sourceList = el("ul", {});
  draft.sources.forEach((source, index) => {
    const drop = el("button", { class: "danger" }, "x");
    drop.addEventListener("click", () => {
      draft.sources.splice(index, 1);
      saveDraft(draft);
      renderComposer(body);
    });
    sourceList.append(el("li", {}, `source:${index} = ${source} `, drop));
  });

  const addOperator = el("button", {}, "add operator");
  addOperator.addEventListener("click", () => {
    draft.operators.push({
      id: `op${draft.operators.length}`,
      kind: "filter",
      params: { field: "", op: ">", value: 0 },
      inputs: [draft.operators.length === 0 ? "source:0" : draft.operators[draft.operators.length - 1].id],
    });
    saveDraft(draft);
    renderComposer(body);
  });

  const inputs = draft.sources.map((s) => byId.get(s)).filter((d): d is FeedDescriptor => d !== undefined);
  const verdict =
    draft.sources.length > 0 && inputs.length === draft.sources.length
      ? validatePipe(draftPipe(draft), inputs)
      : null;

  const operatorsBox = el("div", { class: "operators" });
  draft.operators.forEach((op, index) => {
    const issue = verdict?.issues.find((i) => i.operator === op.id) ?? null;
    const paramsInput = el("input", { value: JSON.stringify(op.params) });
    const idInput = el("input", { value: op.id, class: "short" });
    const inputsInput = el("input", { value: op.inputs.join(","), class: "short" });
    const kindSelect = el("select", {});
    for (const kind of ["filter", "aggregate_window", "resample", "sliding_delta", "anonymize_location"]) {
      const option = el("option", { value: kind }, kind);
      if (kind === op.kind) option.setAttribute("selected", "selected");
      kindSelect.append(option);
    }
    const apply = () => {
      try {
        draft.operators[index] = {
          id: idInput.value,
          kind: kindSelect.value as Operator["kind"],
          params: JSON.parse(paramsInput.value || "{}"),
          inputs: inputsInput.value.split(",").map((s) => s.trim()).filter(Boolean),
        };
        saveDraft(draft);
        renderComposer(body);
      } catch {
        /* keep editing until the params parse */
      }
    };
    for (const widget of [paramsInput, idInput, inputsInput, kindSelect]) {
      widget.addEventListener("change", apply);
    }
    const drop = el("button", { class: "danger" }, "x");
    drop.addEventListener("click", () => {
      draft.operators.splice(index, 1);
      saveDraft(draft);
      renderComposer(body);
    });
    operatorsBox.append(
      el("div", { class: `op-row ${issue ? "invalid" : ""}` },
        idInput, kindSelect, paramsInput, inputsInput, drop,
        issue ? el("p", { class: "error" }, issue.message) : "",
      ),
    );
  });

  const generalIssues = verdict?.issues.filter((i) => i.operator === null) ?? [];
  const save = el("button", { class: "primary" }, "Save pipe") as HTMLButtonElement;
  save.disabled = draft.sources.length === 0 || verdict === null || !verdict.valid;
  const saveNote = el("p", { class: "error" });
  save.addEventListener("click", async () => {
    try {
      const created = await store.createPipe(draftPipe(draft));
      saveDraft({ sources: [], operators: [] });
      saveNote.className = "ok";
      saveNote.textContent = `created derived feed ${created.id}`;
      renderComposer(body);
    } catch (err) {
      // Server rejection: surface the error on the offending operator row.
      saveNote.className = "error";
      saveNote.textContent = err instanceof ApiError ? `${err.code}: ${err.detail}` : String(err);
    }
  });

  clear(body).append(
    el("h2", {}, "Pipe composer"),
    el("div", { class: "row" }, sourcePicker, addOperator, save, saveNote),
    sourceList,
    operatorsBox,
    ...generalIssues.map((issue) => el("p", { class: "error" }, issue.message)),
    verdict?.valid && verdict.outputFields
      ? el("p", { class: "ok" }, "output fields: " + verdict.outputFields.map((f) => `${f.name}:${f.semantic_type.value_kind}`).join(", "))
      : "",
  );
}

// -- live view -----------------------------------------------------------------------

let liveStream: StreamHandle | null = null;
let liveSeries: SeriesPoint[] = [];
let liveMarkers: EventMarker[] = [];
let liveGaps: number[] = [];

function renderLive(body: HTMLElement): void {
  const feeds = store.getState().feeds;
  const picker = el("select", {});
  picker.append(el("option", { value: "" }, "watch feed..."));
  for (const feed of feeds) picker.append(el("option", { value: feed.id }, feed.id));

  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("width", "800");
  svg.setAttribute("height", "240");
  svg.setAttribute("class", "chart");

  const redraw = () => {
    const model = buildChartModel(liveSeries.slice(-600), liveMarkers.slice(-100), liveGaps.slice(-20), 800, 240);
    svg.textContent = "";
    const path = document.createElementNS("http://www.w3.org/2000/svg", "path");
    path.setAttribute("d", model.path);
    path.setAttribute("class", "series");
    svg.append(path);
    for (const marker of model.markers) {
      const line = document.createElementNS("http://www.w3.org/2000/svg", "line");
      line.setAttribute("x1", String(marker.x));
      line.setAttribute("x2", String(marker.x));
      line.setAttribute("y1", "0");
      line.setAttribute("y2", "240");
      line.setAttribute("class", marker.on ? "marker on" : "marker off");
      svg.append(line);
    }
    for (const gap of model.gaps) {
      const line = document.createElementNS("http://www.w3.org/2000/svg", "line");
      line.setAttribute("x1", String(gap.x));
      line.setAttribute("x2", String(gap.x));
      line.setAttribute("y1", "0");
      line.setAttribute("y2", "240");
      line.setAttribute("class", "gap");
      svg.append(line);
    }
  };

  picker.addEventListener("change", () => {
    liveStream?.close();
    liveSeries = [];
    liveMarkers = [];
    liveGaps = [];
    const feedId = picker.value;
    if (!feedId) return;
    const session = store.getState().session;
    if (!session) return;
    const hub = store.hubClient();
    liveStream = openSampleStream(hub.streamUrl(feedId), session.token, {
      onSample: (sample: Sample) => {
        const values = sample.values;
        if (typeof values["on"] === "boolean") {
          liveMarkers.push({ t: sample.t_ms, on: values["on"] as boolean });
        } else {
          const numeric = Object.values(values).find((v) => typeof v === "number");
          if (typeof numeric === "number") liveSeries.push({ t: sample.t_ms, v: numeric });
        }
        redraw();
      },
      onGap: () => {
        const last = liveSeries[liveSeries.length - 1];
        if (last) liveGaps.push(last.t);
        redraw();
      },
    });
  });

  clear(body).append(el("h2", {}, "Live view"), picker, svg);
  redraw();
}

// -- meta-hub search --------------------------------------------------------------------

function renderSearch(body: HTMLElement): void {
  const state = store.getState();
  const qInput = el("input", { placeholder: "keywords" });
  const classInput = el("input", { placeholder: "aggregation class", class: "short" });
  const latInput = el("input", { placeholder: "lat", class: "short" });
  const lonInput = el("input", { placeholder: "lon", class: "short" });
  const kInput = el("input", { placeholder: "k", class: "short" });
  const button = el("button", { class: "primary" }, "Search");
  const results = el("div", { class: "results" });

  const renderResults = () => {
    const current = store.getState();
    clear(results);
    if (current.searchResults.length === 0 && current.appResults.length === 0) {
      results.append(el("p", { class: "empty" }, "no results"));
      return;
    }
    if (current.searchResults.length > 0) {
      results.append(el("h3", {}, `Feeds (${current.searchResults.length})`));
      for (const entry of current.searchResults) {
        results.append(
          el("div", { class: "result" },
            el("strong", {}, entry.descriptor.id),
            el("span", { class: "badge" }, entry.hub_id),
            el("span", {}, ` accuracy=${entry.accuracy ?? "-"} latency=${entry.latency_ms ?? "-"}ms`),
          ),
        );
      }
    }
    if (current.appResults.length > 0) {
      results.append(el("h3", {}, `Apps (${current.appResults.length})`));
      for (const entry of current.appResults) {
        const install = el("button", {}, "install + start");
        const badge = el("span", { class: "badge" });
        const installed = current.apps.find((a) => a.app_id === entry.app_id);
        if (installed) badge.textContent = installed.state;
        install.addEventListener("click", async () => {
          try {
            await store.installAppFromCatalog(entry.app_id, entry.version);
            const status = await store.startApp(entry.app_id);
            badge.textContent = status.state;
          } catch (err) {
            badge.textContent = err instanceof ApiError ? err.code : "failed";
          }
        });
        results.append(
          el("div", { class: "result" },
            el("strong", {}, `${entry.name} ${entry.version}`),
            badge,
            install,
          ),
        );
      }
    }
  };

  button.addEventListener("click", async () => {
    try {
      await store.searchMetahub({
        q: qInput.value.trim() || undefined,
        aggregationClass: classInput.value.trim() || undefined,
        lat: latInput.value ? Number(latInput.value) : undefined,
        lon: lonInput.value ? Number(lonInput.value) : undefined,
        k: kInput.value ? Number(kInput.value) : undefined,
      });
    } finally {
      renderResults();
    }
  });

  clear(body).append(
    el("h2", {}, "Meta-hub search"),
    state.session?.metahubBaseUri
      ? el("div", { class: "row" }, qInput, classInput, latInput, lonInput, kInput, button)
      : el("p", { class: "error" }, "no meta-hub configured for this session"),
    results,
  );
  renderResults();
}

// -- boot -----------------------------------------------------------------------------------

const root = document.getElementById("app");
if (root) renderLogin(root);
