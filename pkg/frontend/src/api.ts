/** Typed client for the shortlisting REST API. The UI never computes scores
 * or filters locally; everything rendered comes from these payloads. */

export type Importance = "High" | "Medium" | "Low";
export type FactorStatus = "Draft" | "Analyzed" | "Unrunnable";
export type ShadeName = "light" | "mid" | "strong";

export interface DatasetSummary {
  name: string;
  rows: number;
  columns: string[];
  column_types: Record<string, "numeric" | "text">;
}

export interface NumericProfile {
  column: string;
  kind: "numeric";
  count: number;
  missing: number;
  coerced_missing: number;
  mean: number | null;
  median: number | null;
  min: number | null;
  max: number | null;
  stddev: number | null;
  stddev_convention: string;
}

export interface TextProfile {
  column: string;
  kind: "text";
  count: number;
  missing: number;
  distinct: number;
  top_values: [string, number][];
}

export type ColumnProfile = NumericProfile | TextProfile;

export interface RowMatch {
  row_id: number;
  reason: string;
}

export interface FactorAnalysis {
  factor_id: string;
  profiles: ColumnProfile[];
  local_shortlist: RowMatch[];
  message: string;
}

export interface Factor {
  id: string;
  title: string;
  source_columns: string[];
  criteria: string;
  provocation: string;
  provocation_stale: boolean;
  importance: Importance;
  weight: number;
  filter: string | null;
  status: FactorStatus;
  stale_analysis: boolean;
  analysis: FactorAnalysis | null;
}

export interface Contributor {
  factor_id: string;
  weight: number;
}

export interface RankedRow {
  row_id: number;
  score: number;
  score_hundredths: number;
  contributors: Contributor[];
  reason: string;
}

export interface Shortlist {
  entries: RankedRow[];
  highlights: Record<string, Record<string, ShadeName>>;
}

export interface SessionSummary {
  session_id: string;
  scenario: string;
  dataset: DatasetSummary | null;
  query: string | null;
  factors: Factor[];
  shortlist_stale: boolean;
  shortlist: Shortlist | null;
}

export interface DatasetRows {
  headers: string[];
  rows: { id_: number; cells: string[] }[];
}

export interface ScenarioInfo {
  display_name: string;
  mode: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public retriable: boolean,
  ) {
    super(message);
  }
}

async function request<T>(method: string, path: string, body?: unknown): Promise<T> {
  const init: RequestInit = { method };
  if (body !== undefined) {
    init.headers = { "Content-Type": "application/json" };
    init.body = JSON.stringify(body);
  }
  const response = await fetch(path, init);
  if (!response.ok) {
    const data = await response.json().catch(() => null);
    if (data && typeof data.code === "string") {
      throw new ApiError(response.status, data.code, data.message, !!data.retriable);
    }
    throw new ApiError(response.status, "http_error", response.statusText, false);
  }
  if (response.status === 204) {
    return undefined as T;
  }
  return (await response.json()) as T;
}

export const api = {
  createSession(): Promise<SessionSummary> {
    return request("POST", "/api/sessions");
  },
  getSession(sid: string): Promise<SessionSummary> {
    return request("GET", `/api/sessions/${sid}`);
  },
  async uploadDataset(sid: string, file: File): Promise<DatasetSummary> {
    const form = new FormData();
    form.append("file", file);
    const response = await fetch(`/api/sessions/${sid}/dataset`, {
      method: "POST",
      body: form,
    });
    if (!response.ok) {
      const data = await response.json().catch(() => null);
      throw new ApiError(
        response.status,
        data?.code ?? "http_error",
        data?.message ?? response.statusText,
        !!data?.retriable,
      );
    }
    return (await response.json()) as DatasetSummary;
  },
  runQuery(sid: string, text: string): Promise<{ factors: Factor[]; warnings: string[] }> {
    return request("POST", `/api/sessions/${sid}/query`, { text });
  },
  spawnFactor(sid: string): Promise<Factor> {
    return request("POST", `/api/sessions/${sid}/factors`);
  },
  patchFactor(sid: string, fid: string, patch: object): Promise<Factor> {
    return request("PATCH", `/api/sessions/${sid}/factors/${fid}`, patch);
  },
  deleteFactor(sid: string, fid: string): Promise<void> {
    return request("DELETE", `/api/sessions/${sid}/factors/${fid}`);
  },
  analyzeFactor(sid: string, fid: string): Promise<FactorAnalysis> {
    return request("POST", `/api/sessions/${sid}/factors/${fid}/analyze`);
  },
  shortlist(sid: string): Promise<Shortlist> {
    return request("POST", `/api/sessions/${sid}/shortlist`);
  },
  datasetRows(sid: string): Promise<DatasetRows> {
    return request("GET", `/api/sessions/${sid}/rows`);
  },
  scenarios(): Promise<{ scenarios: ScenarioInfo[] }> {
    return request("GET", "/api/scenarios");
  },
  bindScenario(sid: string, name: string): Promise<SessionSummary> {
    return request("POST", `/api/sessions/${sid}/scenario`, { name });
  },
};
