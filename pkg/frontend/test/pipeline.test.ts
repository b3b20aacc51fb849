import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { RenderPipeline, type FrameStats } from "../src/pipeline";
import type { FetchFn } from "../src/api";
import type { Meta, ViewerState } from "../src/types";

const meta: Meta = {
  api: 1, avatar_id: "x", vertex_count: 256,
  n_beta: 32, n_theta: 12, n_psi: 32,
  slider_range: [-3, 3],
  resolutions: [128, 256, 512],
  max_resolution: 512,
  decoder_mode: "affine",
  grid_res: 64,
};

function state(over: Partial<ViewerState> = {}): ViewerState {
  return {
    yaw: 0, pitch: 0, distance: 2.6, fov: 35,
    psi: new Array(meta.n_psi).fill(0),
    theta: new Array(meta.n_theta).fill(0),
    resolution: 256,
    ...over,
  };
}

function psiState(i: number, value: number): ViewerState {
  const s = state();
  s.psi[i] = value;
  return s;
}

function pngResponse(size: number): Response {
  return new Response(new Blob([new Uint8Array(size)], { type: "image/png" }),
                      { status: 200, headers: { "X-Render-Ms": "12.5" } });
}

interface Deferred {
  resolve: (r: Response) => void;
  body: any;
  at: number;
}

/** fetch stub that records every body and lets tests settle responses */
function wiretap(auto = false) {
  const calls: Deferred[] = [];
  const fetchFn: FetchFn = (_url, init) => {
    const body = JSON.parse(String(init?.body));
    if (auto) {
      calls.push({ resolve: () => {}, body, at: Date.now() });
      return Promise.resolve(pngResponse(calls.length));
    }
    return new Promise<Response>((resolve) => {
      calls.push({ resolve, body, at: Date.now() });
    });
  };
  return { calls, fetchFn };
}

function harness(fetchFn: FetchFn) {
  const shown: Array<{ size: number; stats: FrameStats }> = [];
  const errors: string[] = [];
  const pipeline = new RenderPipeline("", meta, {
    display: (blob, stats) => shown.push({ size: blob.size, stats }),
    error: (m) => errors.push(m),
    fetchFn,
  });
  return { pipeline, shown, errors };
}

const flush = () => vi.advanceTimersByTimeAsync(0);

describe("RenderPipeline", () => {
  beforeEach(() => {
    vi.useFakeTimers({ toFake: ["setTimeout", "clearTimeout", "Date"] });
  });
  afterEach(() => {
    vi.useRealTimers();
  });

  it("clamps every body before it reaches the wire", async () => {
    const { calls, fetchFn } = wiretap();
    const { pipeline } = harness(fetchFn);
    const s = state({ pitch: 300, resolution: 999 });
    s.psi[0] = 42;
    s.theta[2] = -11;
    pipeline.update(s);
    await flush();
    expect(calls).toHaveLength(1);
    expect(calls[0].body.psi[0]).toBe(3);
    expect(calls[0].body.theta[2]).toBe(-3);
    expect(calls[0].body.pitch).toBe(85);
    expect(calls[0].body.resolution).toBe(512);
  });

  it("keeps one request in flight and coalesces to the newest state", async () => {
    const { calls, fetchFn } = wiretap();
    const { pipeline, shown } = harness(fetchFn);
    pipeline.update(psiState(0, 0.1));
    await flush();
    await vi.advanceTimersByTimeAsync(100);
    pipeline.update(psiState(0, 0.2)); // queued behind the open request
    await vi.advanceTimersByTimeAsync(100);
    pipeline.update(psiState(0, 0.3)); // replaces the queued state
    await vi.advanceTimersByTimeAsync(100);
    expect(calls).toHaveLength(1);

    calls[0].resolve(pngResponse(1));
    await flush();
    expect(calls).toHaveLength(2); // exactly one follow-up
    expect(calls[1].body.psi[0]).toBe(0.3); // 0.2 never reached the wire
    calls[1].resolve(pngResponse(2));
    await flush();
    expect(shown.map((f) => f.size)).toEqual([1, 2]);
    expect(pipeline.requests).toBe(2);
  });

  it("never overwrites a newer frame with a stale response", async () => {
    const { calls, fetchFn } = wiretap();
    const { pipeline, shown, errors } = harness(fetchFn);
    const a = psiState(1, 1.0);
    const b = psiState(1, 2.0);

    pipeline.update(a);
    await flush();
    calls[0].resolve(pngResponse(11));
    await flush();
    await vi.advanceTimersByTimeAsync(100);

    pipeline.update(b); // slow request, left pending
    await flush();
    await vi.advanceTimersByTimeAsync(100);

    pipeline.update(a); // cache hit, displayed immediately
    await flush();
    expect(shown.map((f) => f.size)).toEqual([11, 11]);
    expect(shown[1].stats.fromCache).toBe(true);

    calls[1].resolve(pngResponse(22)); // b arrives late
    await flush();
    expect(shown.map((f) => f.size)).toEqual([11, 11]); // not overwritten
    expect(errors).toEqual([]);
  });

  it("serves an identical state from the cache without a request", async () => {
    const { calls, fetchFn } = wiretap();
    const { pipeline, shown } = harness(fetchFn);
    pipeline.update(psiState(0, 0.5));
    await flush();
    calls[0].resolve(pngResponse(7));
    await flush();
    await vi.advanceTimersByTimeAsync(150);
    pipeline.update(psiState(0, 0.5));
    await flush();
    expect(calls).toHaveLength(1);
    expect(shown).toHaveLength(2);
    expect(shown[1].stats.fromCache).toBe(true);
  });

  it("surfaces 4xx detail inline and recovers on the next request", async () => {
    const { calls, fetchFn } = wiretap();
    const { pipeline, shown, errors } = harness(fetchFn);
    pipeline.update(state());
    await flush();
    calls[0].resolve(new Response(
      JSON.stringify({ detail: [{ field: "resolution", message: "must lie in [16, 512]" }] }),
      { status: 400 }));
    await flush();
    expect(shown).toHaveLength(0);
    expect(errors).toHaveLength(1);
    expect(errors[0]).toContain("400");
    expect(errors[0]).toContain("resolution");
    expect(errors[0]).toContain("must lie in [16, 512]");

    await vi.advanceTimersByTimeAsync(150);
    pipeline.update(psiState(3, 0.7));
    await flush();
    calls[1].resolve(pngResponse(5));
    await flush();
    expect(shown.map((f) => f.size)).toEqual([5]);
  });

  it("stays at or under ten wire requests per second while dragging", async () => {
    const { calls, fetchFn } = wiretap(true);
    const { pipeline } = harness(fetchFn);
    let yaw = 0;
    for (let t = 0; t < 2000; t += 16) {
      pipeline.update(state({ yaw: (yaw += 0.7) }));
      await vi.advanceTimersByTimeAsync(16);
    }
    await vi.advanceTimersByTimeAsync(300);
    expect(calls.length).toBeGreaterThanOrEqual(18); // kept streaming
    const stamps = calls.map((c) => c.at);
    for (const start of stamps) {
      const inWindow = stamps.filter((s) => s >= start && s < start + 1000);
      expect(inWindow.length).toBeLessThanOrEqual(10);
    }
  });
});
