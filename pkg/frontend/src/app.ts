/** Application shell: one state object, server-driven re-renders.
 *
 * Every mutation posts to the API and re-renders from the server's response,
 * so a replayed scenario paints exactly the same screens each run. At most
 * one mutation is in flight at a time.
 */

import { api, ApiError, type DatasetRows, type ScenarioInfo, type SessionSummary } from "./api.js";
import { renderApp } from "./views.js";

interface AppState {
  session: SessionSummary | null;
  scenarios: ScenarioInfo[];
  rows: DatasetRows | null;
  showDataset: boolean;
  busy: string | null;
  busyStarted: number;
  error: string | null;
  uploadError: string | null;
}

const state: AppState = {
  session: null,
  scenarios: [],
  rows: null,
  showDataset: false,
  busy: null,
  busyStarted: 0,
  error: null,
  uploadError: null,
};

const root = document.getElementById("app")!;
let ticker: number | undefined;

function render(): void {
  root.innerHTML = renderApp({
    session: state.session,
    scenarios: state.scenarios,
    rows: state.rows,
    showDataset: state.showDataset,
    busy: state.busy,
    elapsedSeconds: state.busy ? Math.round((Date.now() - state.busyStarted) / 1000) : 0,
    error: state.error,
    uploadError: state.uploadError,
  });
}

function startBusy(label: string): void {
  state.busy = label;
  state.busyStarted = Date.now();
  render();
  // Model calls run 15-60s; show elapsed time so the wait reads as progress.
  ticker = window.setInterval(() => {
    const el = document.getElementById("busy-elapsed");
    if (el) el.textContent = String(Math.round((Date.now() - state.busyStarted) / 1000));
  }, 1000);
}

function stopBusy(): void {
  state.busy = null;
  if (ticker !== undefined) {
    window.clearInterval(ticker);
    ticker = undefined;
  }
}

async function withBusy(label: string, action: () => Promise<void>): Promise<void> {
  if (state.busy) return; // one in-flight mutation per session
  state.error = null;
  startBusy(label);
  try {
    await action();
  } catch (err) {
    state.error = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
  } finally {
    stopBusy();
    render();
  }
}

async function refreshSession(): Promise<void> {
  if (!state.session) return;
  state.session = await api.getSession(state.session.session_id);
  if (state.session.dataset && !state.rows) {
    state.rows = await api.datasetRows(state.session.session_id);
  }
}

function sid(): string {
  return state.session!.session_id;
}

async function handleAction(action: string, target: HTMLElement): Promise<void> {
  const fid = target.dataset.fid ?? "";
  switch (action) {
    case "run-query": {
      const box = document.getElementById("query-box") as HTMLTextAreaElement;
      await withBusy("Generating factors and provocations", async () => {
        await api.runQuery(sid(), box.value);
        await refreshSession();
      });
      break;
    }
    case "spawn-factor":
      await withBusy("Adding a factor card", async () => {
        await api.spawnFactor(sid());
        await refreshSession();
      });
      break;
    case "delete-factor":
      await withBusy("Deleting factor", async () => {
        await api.deleteFactor(sid(), fid);
        await refreshSession();
      });
      break;
    case "set-importance":
      await withBusy("Updating importance", async () => {
        await api.patchFactor(sid(), fid, { importance: target.dataset.level });
        await refreshSession();
      });
      break;
    case "analyze":
      await withBusy("Analyzing factor", async () => {
        await api.analyzeFactor(sid(), fid);
        await refreshSession();
      });
      break;
    case "shortlist":
      await withBusy("Updating recommendations", async () => {
        await api.shortlist(sid());
        await refreshSession();
        state.showDataset = true;
      });
      break;
    case "toggle-dataset":
      state.showDataset = !state.showDataset;
      if (state.showDataset && !state.rows && state.session?.dataset) {
        state.rows = await api.datasetRows(sid());
      }
      render();
      break;
  }
}

async function handleFieldEdit(input: HTMLInputElement | HTMLTextAreaElement): Promise<void> {
  const field = input.dataset.field!;
  const fid = input.dataset.fid!;
  const patch: Record<string, unknown> = {};
  if (field === "source_columns") {
    patch[field] = input.value
      .split(",")
      .map((part) => part.trim())
      .filter((part) => part.length > 0);
  } else {
    patch[field] = input.value;
  }
  await withBusy("Saving edit", async () => {
    await api.patchFactor(sid(), fid, patch);
    await refreshSession();
  });
}

async function handleUpload(input: HTMLInputElement): Promise<void> {
  const file = input.files?.[0];
  if (!file) return;
  state.uploadError = null;
  await withBusy(`Loading ${file.name}`, async () => {
    try {
      await api.uploadDataset(sid(), file);
      state.rows = null;
      state.showDataset = false;
      await refreshSession();
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        state.uploadError = err.message; // surface load errors inline
        return;
      }
      throw err;
    }
  });
}

function wireEvents(): void {
  root.addEventListener("click", (event) => {
    const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
    if (target && target.dataset.action !== "spawn-factor") {
      void handleAction(target.dataset.action!, target);
    }
  });
  // The spawn handle works by click-and-drag, not click.
  root.addEventListener("dragend", (event) => {
    const target = (event.target as HTMLElement).closest<HTMLElement>(
      "[data-action=spawn-factor]",
    );
    if (target) void handleAction("spawn-factor", target);
  });
  root.addEventListener("change", (event) => {
    const element = event.target as HTMLElement;
    if (element.id === "dataset-file") {
      void handleUpload(element as HTMLInputElement);
    } else if (element.id === "scenario-select") {
      const select = element as HTMLSelectElement;
      void withBusy(`Switching to scenario ${select.value}`, async () => {
        state.session = await api.bindScenario(sid(), select.value);
        state.rows = null;
        state.showDataset = false;
        await refreshSession();
      });
    } else if ((element as HTMLInputElement).dataset?.field) {
      void handleFieldEdit(element as HTMLInputElement);
    }
  });
}

async function main(): Promise<void> {
  render();
  try {
    const [session, scenarios] = await Promise.all([
      api.createSession(),
      api.scenarios(),
    ]);
    state.session = session;
    state.scenarios = scenarios.scenarios;
    if (session.dataset) {
      state.rows = await api.datasetRows(session.session_id);
    }
  } catch (err) {
    state.error = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
  }
  wireEvents();
  render();
}

void main();
