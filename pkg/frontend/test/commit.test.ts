import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { SessionModel } from "../src/model";

/** In-memory stand-in for the threshold service. */
function fakeServer() {
  const state = {
    thresholds: { Muc2: 0 } as Record<string, number>,
    requests: [] as { method: string; path: string }[],
    failNextPut: false,
    histogramDelayMs: 0,
  };
  const fetchFn = async (
    input: RequestInfo | URL,
    init?: RequestInit,
  ): Promise<Response> => {
    const url = String(input);
    const method = init?.method ?? "GET";
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    state.requests.push({ method, path });
    const json = (body: unknown, status = 200) =>
      new Response(JSON.stringify(body), {
        status,
        headers: { "content-type": "application/json" },
      });
    if (method === "PUT") {
      if (state.failNextPut) {
        state.failNextPut = false;
        return json({ detail: "threshold must be finite and >= 0" }, 422);
      }
      Object.assign(state.thresholds, JSON.parse(String(init?.body)));
      return json({
        thresholds: state.thresholds,
        positive_counts: { Muc2: state.thresholds.Muc2 <= 15 ? 2 : 1 },
        class_counts: { goblet: state.thresholds.Muc2 <= 15 ? 2 : 1, excluded: 1 },
      });
    }
    if (path.includes("/histogram")) {
      if (state.histogramDelayMs > 0) {
        await new Promise((r) => setTimeout(r, state.histogramDelayMs));
      }
      return json({
        stain: "Muc2",
        bin_edges: [10, 20, 30],
        counts: [1, 2],
        threshold: state.thresholds.Muc2,
        positive_count: null,
        instance_count: 3,
      });
    }
    if (/\/api\/slides\/[^/]+$/.test(path)) {
      return json({
        slide_id: "fix", width_px: 64, height_px: 64, tile_size: 256,
        max_level: 0, channels: ["Muc2"], stains: ["Muc2"],
        thresholds: state.thresholds, class_counts: { excluded: 3 },
        instance_count: 3,
      });
    }
    return json({ slides: [], warnings: [] });
  };
  return { state, fetchFn };
}

describe("SessionModel.commit", () => {
  let server: ReturnType<typeof fakeServer>;
  let model: SessionModel;

  beforeEach(async () => {
    server = fakeServer();
    model = new SessionModel(new ApiClient("http://fake", server.fetchFn));
    await model.selectSlide("fix");
    server.state.requests.length = 0;
  });

  it("sends the draft and adopts the server distribution verbatim", async () => {
    model.setDraft(12);
    const out = await model.commit();
    expect(out.sent).toBe(true);
    expect(model.classCounts).toEqual({ goblet: 2, excluded: 1 });
    expect(model.committedThreshold).toBe(12);
  });

  it("suppresses a no-op commit (unchanged draft)", async () => {
    model.setDraft(model.committedThreshold!);
    const out = await model.commit();
    expect(out.sent).toBe(false);
    expect(server.state.requests.filter((r) => r.method === "PUT")).toHaveLength(0);
  });

  it("a rejected commit leaves committed state untouched", async () => {
    const before = model.committedThreshold;
    const counts = model.classCounts;
    server.state.failNextPut = true;
    model.setDraft(99);
    const out = await model.commit();
    expect(out.sent).toBe(true);
    expect(out.error).toBeTruthy();
    expect(model.lastError).toContain(">= 0");
    expect(model.committedThreshold).toBe(before);
    expect(model.classCounts).toEqual(counts);
  });

  it("rejects non-finite drafts locally", () => {
    expect(() => model.setDraft(Number.NaN)).toThrow();
    expect(() => model.setDraft(-1)).toThrow();
  });

  it("discards a stale histogram response by sequence number", async () => {
    server.state.histogramDelayMs = 50;
    const slow = model.refreshHistogram();
    server.state.histogramDelayMs = 0;
    await model.refreshHistogram();
    const fresh = model.histogram;
    await slow;
    expect(model.histogram).toBe(fresh);
  });
});
