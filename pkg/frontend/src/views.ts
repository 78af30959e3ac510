/** Pure render functions: API payloads in, HTML strings out.
 *
 * Nothing here computes a score, applies a filter, or reorders rows; the
 * table order, shades, and Reason texts come straight from the service so a
 * replayed session renders identically every time.
 */

import type {
  ColumnProfile,
  DatasetRows,
  Factor,
  FactorAnalysis,
  Importance,
  ScenarioInfo,
  SessionSummary,
  ShadeName,
  Shortlist,
} from "./api.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Highlight saturation is monotone in factor weight: none < light < mid < strong. */
export const SHADE_RANK: Record<"none" | ShadeName, number> = {
  none: 0,
  light: 1,
  mid: 2,
  strong: 3,
};

export function shadeClass(shade: ShadeName | undefined): string {
  return shade ? `shade-${shade}` : "";
}

const IMPORTANCE_LEVELS: Importance[] = ["High", "Medium", "Low"];

export function renderUploadAndPrompt(
  dataset: SessionSummary["dataset"],
  query: string | null,
  inlineError: string | null,
): string {
  const summary = dataset
    ? `<p class="dataset-summary">Loaded <strong>${escapeHtml(dataset.name)}</strong>:
       ${dataset.rows} rows × ${dataset.columns.length} columns
       (${escapeHtml(dataset.columns.join(", "))})</p>`
    : `<p class="dataset-summary muted">No dataset loaded yet.</p>`;
  const error = inlineError
    ? `<p class="inline-error">${escapeHtml(inlineError)}</p>`
    : "";
  return `
  <section class="panel upload-panel">
    <h2>Dataset</h2>
    <input type="file" id="dataset-file" accept=".csv,text/csv">
    ${summary}
    ${error}
    <h2>Shortlisting query</h2>
    <textarea id="query-box" rows="3"
      placeholder="What are you shortlisting, and what matters?">${escapeHtml(query ?? "")}</textarea>
    <button id="submit-query" data-action="run-query" ${dataset ? "" : "disabled"}>
      Generate factors
    </button>
    <div class="spawn-handle" draggable="true" data-action="spawn-factor"
         title="Drag to spawn a blank factor card">⠿ drag to add a factor card</div>
  </section>`;
}

function profileRows(profile: ColumnProfile): string {
  if (profile.kind === "numeric") {
    const cells = [
      ["count", profile.count],
      ["missing", profile.missing],
      ["mean", profile.mean],
      ["median", profile.median],
      ["min", profile.min],
      ["max", profile.max],
      [`stddev (${profile.stddev_convention})`, profile.stddev],
    ];
    return cells
      .map(([label, value]) => `<tr><th>${label}</th><td>${value ?? "—"}</td></tr>`)
      .join("");
  }
  const top = profile.top_values
    .map(([value, count]) => `${escapeHtml(value)} (${count})`)
    .join(", ");
  return `
    <tr><th>count</th><td>${profile.count}</td></tr>
    <tr><th>missing</th><td>${profile.missing}</td></tr>
    <tr><th>distinct</th><td>${profile.distinct}</td></tr>
    <tr><th>top values</th><td>${top}</td></tr>`;
}

export function renderAnalysis(analysis: FactorAnalysis): string {
  const profiles = analysis.profiles
    .map(
      (profile) => `
      <table class="profile-table">
        <caption>${escapeHtml(profile.column)}</caption>
        ${profileRows(profile)}
      </table>`,
    )
    .join("");
  const shortlist = analysis.local_shortlist.length
    ? `<ul class="local-shortlist">${analysis.local_shortlist
        .map(
          (match) =>
            `<li><span class="row-id">row ${match.row_id}</span> ${escapeHtml(match.reason)}</li>`,
        )
        .join("")}</ul>`
    : `<p class="empty-state">No rows matched this factor.</p>`;
  const message = analysis.message
    ? `<p class="analysis-message">${escapeHtml(analysis.message)}</p>`
    : "";
  return `
  <div class="factor-analysis">
    <div class="profiles">${profiles}</div>
    <h4>Factor-local shortlist</h4>
    ${shortlist}
    ${message}
  </div>`;
}

export function renderFactorCard(factor: Factor): string {
  const importanceButtons = IMPORTANCE_LEVELS.map(
    (level) => `
    <button data-action="set-importance" data-fid="${factor.id}" data-level="${level}"
      class="importance-button ${factor.importance === level ? "active" : ""}">${level}</button>`,
  ).join("");

  const badges: string[] = [];
  if (factor.status === "Unrunnable") {
    badges.push(`<span class="badge unrunnable">needs source column</span>`);
  }
  if (factor.stale_analysis) {
    badges.push(`<span class="badge stale">stale analysis — update to refresh</span>`);
  }

  const provocationNote = factor.provocation_stale
    ? `<em class="provocation-note">for original criteria</em>`
    : "";

  const analysis =
    factor.analysis !== null
      ? renderAnalysis(factor.analysis)
      : `<p class="empty-state muted">Not analyzed yet.</p>`;

  return `
  <article class="factor-card" data-fid="${factor.id}">
    <header>
      <input class="factor-title" data-field="title" data-fid="${factor.id}"
             value="${escapeHtml(factor.title)}" placeholder="Factor title">
      <button class="delete-button" data-action="delete-factor" data-fid="${factor.id}"
              title="Delete this card">✕</button>
    </header>
    <label>Source columns
      <input data-field="source_columns" data-fid="${factor.id}"
             value="${escapeHtml(factor.source_columns.join(", "))}"
             placeholder="Comma-separated column names">
    </label>
    <label>Criteria
      <textarea data-field="criteria" data-fid="${factor.id}"
        rows="2">${escapeHtml(factor.criteria)}</textarea>
    </label>
    <details class="provocation" open>
      <summary>provocation ${provocationNote}</summary>
      <p>${escapeHtml(factor.provocation) || "<span class='muted'>none yet</span>"}</p>
    </details>
    <div class="importance-group" role="group" aria-label="importance">
      ${importanceButtons}
      <span class="weight">w = ${factor.weight}</span>
    </div>
    <footer>
      <button data-action="analyze" data-fid="${factor.id}">Update analysis</button>
      ${badges.join(" ")}
    </footer>
    ${analysis}
  </article>`;
}

export function renderFactorCards(factors: Factor[]): string {
  if (!factors.length) {
    return `<p class="empty-state muted">Enter a query to generate factor cards,
            or drag the handle to add one by hand.</p>`;
  }
  return factors.map(renderFactorCard).join("\n");
}

export function renderGlobalTable(
  shortlist: Shortlist,
  data: DatasetRows,
  stale: boolean,
): string {
  const cellsById = new Map(data.rows.map((row) => [row.id_, row.cells]));
  const header = ["Score", ...data.headers, "Reason"]
    .map((name) => `<th>${escapeHtml(name)}</th>`)
    .join("");
  const body = shortlist.entries
    .map((entry) => {
      const cells = cellsById.get(entry.row_id) ?? [];
      const shades = shortlist.highlights[String(entry.row_id)] ?? {};
      const dataCells = data.headers
        .map(
          (column, i) =>
            `<td class="${shadeClass(shades[column])}">${escapeHtml(cells[i] ?? "")}</td>`,
        )
        .join("");
      return `<tr data-row="${entry.row_id}"><td class="score">${entry.score}</td>${dataCells}<td class="reason">${escapeHtml(entry.reason)}</td></tr>`;
    })
    .join("\n");
  const staleNote = stale
    ? `<p class="badge stale">Factors changed since this ranking — press “Update recommendations”.</p>`
    : "";
  return `
  <section class="global-table-panel">
    ${staleNote}
    <table class="global-table">
      <thead><tr>${header}</tr></thead>
      <tbody>${body}</tbody>
    </table>
  </section>`;
}

export function renderScenarioPicker(
  scenarios: ScenarioInfo[],
  active: string,
): string {
  const options = scenarios
    .map(
      (scenario) => `
      <option value="${escapeHtml(scenario.display_name)}"
        ${scenario.display_name === active ? "selected" : ""}>
        ${escapeHtml(scenario.display_name)} (${scenario.mode})
      </option>`,
    )
    .join("");
  return `<label class="scenario-picker">Scenario
    <select id="scenario-select">${options}</select></label>`;
}

export interface AppView {
  session: SessionSummary | null;
  scenarios: ScenarioInfo[];
  rows: DatasetRows | null;
  showDataset: boolean;
  busy: string | null;
  elapsedSeconds: number;
  error: string | null;
  uploadError: string | null;
}

export function renderApp(view: AppView): string {
  if (!view.session) {
    return `<p class="muted">Starting session…</p>`;
  }
  const busy = view.busy
    ? `<div class="busy-indicator">${escapeHtml(view.busy)}…
         <span id="busy-elapsed">${view.elapsedSeconds}</span>s</div>`
    : "";
  const error = view.error
    ? `<div class="global-error">${escapeHtml(view.error)}</div>`
    : "";
  const globalTable =
    view.showDataset && view.session.shortlist && view.rows
      ? renderGlobalTable(view.session.shortlist, view.rows, view.session.shortlist_stale)
      : "";
  const toggleLabel = view.showDataset ? "Hide Dataset" : "Show Dataset";
  const canShow = view.session.shortlist !== null;
  return `
  <div class="layout">
    <header class="topbar">
      <h1>provoscope</h1>
      ${renderScenarioPicker(view.scenarios, view.session.scenario)}
    </header>
    ${busy}
    ${error}
    <main>
      <div class="left-column">
        ${renderUploadAndPrompt(view.session.dataset, view.session.query, view.uploadError)}
        <section class="cards">
          ${renderFactorCards(view.session.factors)}
        </section>
      </div>
      ${globalTable}
    </main>
    <footer class="bottombar">
      <button id="update-recommendations" data-action="shortlist"
        ${view.session.factors.some((f) => f.status === "Analyzed") ? "" : "disabled"}>
        Update recommendations
      </button>
      <button id="toggle-dataset" data-action="toggle-dataset" ${canShow ? "" : "disabled"}>
        ${toggleLabel}
      </button>
    </footer>
  </div>`;
}
