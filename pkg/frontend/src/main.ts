/** Explorer app wiring: pick a dataset, select a region, set the
 * quality/time weight, run queries and inspect results. */

import { ApiClient } from "./api";
import { renderCompare } from "./compare";
import { renderPlanPanel } from "./plan";
import { pollJob } from "./poll";
import {
  combinePredicates,
  EmptySelectionError,
  rangePredicate,
  rectanglePredicate,
} from "./predicate";
import { ExplorationSession } from "./session";
import { renderTopicBars } from "./topics";
import type {
  DatasetInfo,
  PredicateJson,
  QueryRequest,
  QueryResultJson,
} from "./types";

const baseUrl =
  new URLSearchParams(window.location.search).get("api") ??
  "http://127.0.0.1:8080";
const api = new ApiClient(baseUrl);

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const state: {
  datasets: DatasetInfo[];
  session: ExplorationSession | null;
  rectangle: { x0: number; y0: number; x1: number; y1: number } | null;
} = { datasets: [], session: null, rectangle: null };

function currentDataset(): DatasetInfo | null {
  const name = (byId<HTMLSelectElement>("dataset")).value;
  return state.datasets.find((d) => d.name === name) ?? null;
}

function orderedAttrs(ds: DatasetInfo): string[] {
  return Object.entries(ds.attributes)
    .filter(([, kind]) => kind !== "category")
    .map(([name]) => name)
    .sort();
}

function buildPredicate(): PredicateJson {
  const ds = currentDataset();
  if (!ds) throw new EmptySelectionError("pick a dataset first");
  const mode = byId<HTMLSelectElement>("mode").value;
  if (mode === "geo") {
    if (!state.rectangle) {
      throw new EmptySelectionError("drag a rectangle first");
    }
    const r = state.rectangle;
    return rectanglePredicate({
      xAttr: "lon",
      yAttr: "lat",
      x0: r.x0,
      x1: r.x1,
      y0: r.y0,
      y1: r.y1,
    });
  }
  const attr = byId<HTMLSelectElement>("attr").value;
  const lo = byId<HTMLInputElement>("lo").value;
  const hi = byId<HTMLInputElement>("hi").value;
  return combinePredicates(
    rangePredicate({
      attr,
      lo: lo === "" ? null : Number(lo),
      hi: hi === "" ? null : Number(hi),
    }),
  );
}

let countTimer: number | undefined;

function refreshCountBadge(): void {
  window.clearTimeout(countTimer);
  countTimer = window.setTimeout(async () => {
    const badge = byId<HTMLSpanElement>("count-badge");
    try {
      const ds = currentDataset();
      if (!ds) return;
      const { count } = await api.countDocs(ds.name, buildPredicate());
      badge.textContent = `${count} documents match`;
    } catch (err) {
      badge.textContent =
        err instanceof EmptySelectionError ? err.message : "count unavailable";
    }
  }, 250);
}

async function runQuery(): Promise<void> {
  const ds = currentDataset();
  if (!ds) return;
  const status = byId<HTMLSpanElement>("status");
  let predicate: PredicateJson;
  try {
    predicate = buildPredicate();
  } catch (err) {
    status.textContent = String(
      err instanceof Error ? err.message : err,
    );
    return;
  }
  const alpha = Number(byId<HTMLInputElement>("alpha").value);
  const request: QueryRequest = {
    dataset: ds.name,
    predicate,
    alpha,
    algo: byId<HTMLSelectElement>("algo").value as "cgs" | "vb",
  };
  status.textContent = "submitting...";
  try {
    const { job_id } = await api.submitQuery(request);
    const job = await pollJob(api, job_id, {
      onUpdate: (j) => {
        status.textContent = `job ${j.job_id}: ${j.state}`;
      },
    });
    const result = job.result as QueryResultJson;
    renderTopicBars(byId("topics"), result.topics);
    const trace = await api.getTrace(job_id);
    renderPlanPanel(byId("plan"), trace);
    if (!state.session || state.session.dataset !== ds.name) {
      state.session = new ExplorationSession(ds.name);
    }
    const entry = state.session.record({
      predicate,
      alpha,
      jobId: job_id,
      topics: result.topics,
    });
    const item = document.createElement("li");
    item.textContent = `${entry.label} alpha=${alpha} ${JSON.stringify(predicate)}`;
    item.addEventListener("click", () => pinForCompare(entry.label));
    byId("history").appendChild(item);
    status.textContent = `done (${trace.search.method})`;
  } catch (err) {
    status.textContent = `failed: ${err instanceof Error ? err.message : err}`;
  }
}

const compareBuffer: string[] = [];

function pinForCompare(label: string): void {
  const session = state.session;
  if (!session) return;
  compareBuffer.push(label);
  if (compareBuffer.length < 2) return;
  const [a, b] = compareBuffer.splice(0, 2);
  const left = session.history.find((h) => h.label === a);
  const right = session.history.find((h) => h.label === b);
  if (left && right) {
    renderCompare(byId("compare"), left.topics, right.topics);
  }
}

function wireGeoPad(): void {
  const pad = byId<HTMLDivElement>("geo-pad");
  let dragFrom: { x: number; y: number } | null = null;
  const toLonLat = (ev: MouseEvent) => {
    const rect = pad.getBoundingClientRect();
    const fx = (ev.clientX - rect.left) / rect.width;
    const fy = (ev.clientY - rect.top) / rect.height;
    return { x: -180 + fx * 360, y: 90 - fy * 180 };
  };
  pad.addEventListener("mousedown", (ev) => {
    dragFrom = toLonLat(ev);
  });
  pad.addEventListener("mouseup", (ev) => {
    if (!dragFrom) return;
    const to = toLonLat(ev);
    state.rectangle = {
      x0: dragFrom.x,
      y0: dragFrom.y,
      x1: to.x,
      y1: to.y,
    };
    dragFrom = null;
    refreshCountBadge();
  });
}

async function boot(): Promise<void> {
  state.datasets = await api.listDatasets();
  const select = byId<HTMLSelectElement>("dataset");
  select.replaceChildren(
    ...state.datasets.map((d) => {
      const opt = document.createElement("option");
      opt.value = d.name;
      opt.textContent = `${d.name} (${d.n_docs} docs)`;
      return opt;
    }),
  );
  const refreshAttrs = () => {
    const ds = currentDataset();
    if (!ds) return;
    byId<HTMLSelectElement>("attr").replaceChildren(
      ...orderedAttrs(ds).map((a) => {
        const opt = document.createElement("option");
        opt.value = a;
        opt.textContent = a;
        return opt;
      }),
    );
    refreshCountBadge();
  };
  select.addEventListener("change", refreshAttrs);
  refreshAttrs();
  for (const id of ["lo", "hi", "attr", "mode"]) {
    byId(id).addEventListener("input", refreshCountBadge);
  }
  byId<HTMLInputElement>("alpha").addEventListener("input", () => {
    byId("alpha-value").textContent =
      byId<HTMLInputElement>("alpha").value;
  });
  byId("run").addEventListener("click", () => void runQuery());
  wireGeoPad();
}

void boot();
