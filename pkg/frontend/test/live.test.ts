// Integration against the real service: builds a desk-scale avatar once
// (the same 64 grid the fit acceptance uses, so per-frame cost matches),
// boots `gaga serve`, and drives the real pipeline over real HTTP.
import { execFile, spawn, type ChildProcess } from "node:child_process";
import { mkdtemp, rm } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { promisify } from "node:util";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { fetchMeta, type FetchFn } from "../src/api";
import { applyDrag } from "../src/orbit";
import { RenderPipeline, type FrameStats } from "../src/pipeline";
import { initialState, type Meta, type ViewerState } from "../src/types";

const run = promisify(execFile);
const PORT = 8971;
const BASE = `http://127.0.0.1:${PORT}`;

let dir: string;
let server: ChildProcess | undefined;
let meta: Meta;

async function waitReady(timeoutMs: number) {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const resp = await fetch(`${BASE}/meta`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error("service never came up");
    await new Promise((r) => setTimeout(r, 500));
  }
}

beforeAll(async () => {
  dir = await mkdtemp(join(tmpdir(), "gaga-live-"));
  const model = join(dir, "head.gagm");
  const targets = join(dir, "targets");
  const avatar = join(dir, "avatar.gaga");
  await run("gaga", ["model", "gen", "--seed", "3", "--vertices", "256",
                     "--out", model]);
  await run("gaga", ["targets", "gen", "--model", model, "--seed", "3",
                     "--resolution", "128", "--grid-res", "64", "--out", targets]);
  await run("gaga", ["fit", "--model", model, "--targets", targets,
                     "--out", avatar, "--iters", "3", "--lr", "1e-2",
                     "--grid-res", "64", "--seed", "3"]);
  server = spawn("gaga", ["serve", "--avatar", avatar, "--port", String(PORT)],
                 { stdio: "ignore" });
  await waitReady(120_000);
  meta = await fetchMeta(BASE);
}, 300_000);

afterAll(async () => {
  server?.kill();
  if (dir) await rm(dir, { recursive: true, force: true });
});

interface Shown {
  blob: Blob;
  stats: FrameStats;
}

function livePipeline(fetchFn?: FetchFn) {
  const bodies: any[] = [];
  const frames: Shown[] = [];
  const errors: string[] = [];
  let waiter: ((s: Shown) => void) | null = null;
  const tap: FetchFn = (url, init) => {
    if (init?.body) bodies.push(JSON.parse(String(init.body)));
    return (fetchFn ?? fetch)(url, init);
  };
  const pipeline = new RenderPipeline(BASE, meta, {
    display: (blob, stats) => {
      const shown = { blob, stats };
      frames.push(shown);
      if (waiter) {
        const w = waiter;
        waiter = null;
        w(shown);
      }
    },
    error: (m) => errors.push(m),
    fetchFn: tap,
  });
  const nextFrame = () => new Promise<Shown>((resolve) => { waiter = resolve; });
  return { pipeline, bodies, frames, errors, nextFrame };
}

describe("live loop", () => {
  it("a slider change shows a new frame within 500 ms at 256 px", async () => {
    const { pipeline, nextFrame, errors } = livePipeline();
    const state = initialState(meta);
    expect(state.resolution).toBe(256);

    // warm pass, absorbs the server process's first-render setup
    let arrived = nextFrame();
    pipeline.update(state);
    await arrived;

    const measure = async (value: number) => {
      const next: ViewerState = { ...state, psi: state.psi.slice() };
      next.psi[0] = value;
      const t0 = performance.now();
      arrived = nextFrame();
      pipeline.update(next);
      await arrived;
      return performance.now() - t0;
    };
    let ms = await measure(1.0);
    if (ms > 500) ms = await measure(-1.0); // one re-measure absorbs scheduler jitter
    expect(errors).toEqual([]);
    expect(ms).toBeLessThanOrEqual(500);
  }, 60_000);

  it("out-of-range inputs are clamped before the wire and still render", async () => {
    const { pipeline, bodies, nextFrame, errors } = livePipeline();
    const state = initialState(meta);
    state.psi[0] = 42;
    state.theta[1] = -99;
    state.pitch = 400;
    state.resolution = 300;
    const arrived = nextFrame();
    pipeline.update(state);
    const shown = await arrived;

    expect(errors).toEqual([]); // the server would 400/422 out-of-range bodies
    expect(shown.blob.size).toBeGreaterThan(0);
    expect(bodies.length).toBeGreaterThan(0);
    const [lo, hi] = meta.slider_range;
    for (const body of bodies) {
      for (const v of [...body.psi, ...body.theta]) {
        expect(v).toBeGreaterThanOrEqual(lo);
        expect(v).toBeLessThanOrEqual(hi);
      }
      expect(meta.resolutions).toContain(body.resolution);
      expect(Math.abs(body.pitch)).toBeLessThanOrEqual(85);
    }
  }, 60_000);

  it("orbit drag changes the camera and the image follows", async () => {
    const { pipeline, nextFrame } = livePipeline();
    const state = initialState(meta);
    let arrived = nextFrame();
    pipeline.update(state);
    const neutral = await arrived;

    arrived = nextFrame();
    pipeline.update(applyDrag(state, 120, -40));
    const dragged = await arrived;

    const a = Buffer.from(await neutral.blob.arrayBuffer());
    const b = Buffer.from(await dragged.blob.arrayBuffer());
    expect(a.equals(b)).toBe(false);
  }, 60_000);

  it("a drag burst stays at or under ten wire requests per second", async () => {
    const { pipeline, bodies, frames } = livePipeline();
    const state = initialState(meta);
    const t0 = performance.now();
    let yaw = 0;
    while (performance.now() - t0 < 900) {
      pipeline.update({ ...state, yaw: (yaw += 0.5) });
      await new Promise((r) => setTimeout(r, 15));
    }
    // let the trailing request and display drain
    await new Promise((r) => setTimeout(r, 1500));
    const elapsedS = (performance.now() - t0) / 1000;
    expect(bodies.length).toBeLessThanOrEqual(Math.ceil(elapsedS * 10) + 1);
    expect(bodies.length).toBeGreaterThanOrEqual(2);
    expect(frames.length).toBeGreaterThanOrEqual(1);
  }, 60_000);
});
