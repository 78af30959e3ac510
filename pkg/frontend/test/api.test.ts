import { afterEach, describe, expect, it, vi } from "vitest";

import { api, ApiError } from "../src/api.js";

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("api client", () => {
  it("returns parsed payloads", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async () => jsonResponse(201, { session_id: "abc", factors: [] })),
    );
    const session = await api.createSession();
    expect(session.session_id).toBe("abc");
  });

  it("maps the uniform error body to ApiError", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async () =>
        jsonResponse(409, { code: "no_dataset", message: "upload first", retriable: false }),
      ),
    );
    const failure = api.runQuery("abc", "x").catch((e) => e);
    const error = await failure;
    expect(error).toBeInstanceOf(ApiError);
    expect(error.status).toBe(409);
    expect(error.code).toBe("no_dataset");
    expect(error.retriable).toBe(false);
  });

  it("sends JSON bodies for mutations", async () => {
    const calls: RequestInit[] = [];
    vi.stubGlobal(
      "fetch",
      vi.fn(async (_url: string, init: RequestInit) => {
        calls.push(init);
        return jsonResponse(200, {});
      }),
    );
    await api.patchFactor("s", "f1", { importance: "Low" });
    expect(calls[0]!.method).toBe("PATCH");
    expect(JSON.parse(calls[0]!.body as string)).toEqual({ importance: "Low" });
  });

  it("uploads datasets as multipart form data", async () => {
    let seenBody: unknown;
    vi.stubGlobal(
      "fetch",
      vi.fn(async (_url: string, init: RequestInit) => {
        seenBody = init.body;
        return jsonResponse(200, { name: "movies.csv", rows: 1, columns: [], column_types: {} });
      }),
    );
    const file = new File(["a\n1\n"], "movies.csv", { type: "text/csv" });
    const summary = await api.uploadDataset("s", file);
    expect(seenBody).toBeInstanceOf(FormData);
    expect(summary.rows).toBe(1);
  });
});
