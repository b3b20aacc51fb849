import { renderFrame, ServiceError, type FetchFn } from "./api";
import { FrameCache } from "./cache";
import { clampState } from "./clamp";
import { Throttle } from "./throttle";
import type { Meta, ViewerState } from "./types";

export interface FrameStats {
  serverMs: number;
  totalMs: number;
  fromCache: boolean;
}

export interface PipelineHooks {
  display: (blob: Blob, stats: FrameStats) => void;
  error?: (message: string) => void;
  fetchFn?: FetchFn;
  throttleMs?: number;
}

interface Submission {
  id: number;
  key: string;
  state: ViewerState;
}

/**
 * State changes in, frames out.
 *
 * A throttle caps the wire rate at one request per window; every body is
 * clamped to the ranges /meta advertises; identical states are served
 * from a client-side cache; at most one request is in flight, newer
 * states coalescing into a single trailing one. A frame is dropped if
 * an image from a newer state is already on screen, so a slow response
 * can never overwrite a newer image.
 */
export class RenderPipeline {
  requests = 0; // requests actually put on the wire

  private throttle: Throttle<ViewerState>;
  private cache = new FrameCache();
  private seq = 0;
  private shown = 0; // id of the newest displayed frame
  private inflight = false;
  private queued: Submission | null = null;

  constructor(private base: string, private meta: Meta,
              private hooks: PipelineHooks) {
    this.throttle = new Throttle((s: ViewerState) => this.submit(s),
                                 hooks.throttleMs ?? 100);
  }

  /** entry point for every UI interaction */
  update(state: ViewerState) {
    this.throttle.call(state);
  }

  private submit(state: ViewerState) {
    const clamped = clampState(state, this.meta);
    const key = JSON.stringify(clamped);
    const id = ++this.seq;
    const hit = this.cache.get(key);
    if (hit !== undefined) {
      this.show(id, hit, { serverMs: 0, totalMs: 0, fromCache: true });
      return;
    }
    const sub = { id, key, state: clamped };
    if (this.inflight) {
      this.queued = sub; // latest wins, an older queued state is dropped
      return;
    }
    void this.issue(sub);
  }

  private async issue(sub: Submission) {
    this.inflight = true;
    this.requests += 1;
    try {
      const res = await renderFrame(this.base, sub.state, this.hooks.fetchFn);
      this.cache.put(sub.key, res.blob);
      this.show(sub.id, res.blob, {
        serverMs: res.serverMs, totalMs: res.totalMs, fromCache: false,
      });
    } catch (e) {
      const msg = e instanceof ServiceError
        ? `render failed (${e.status}): ${e.message}`
        : e instanceof Error ? e.message : String(e);
      this.hooks.error?.(msg);
    } finally {
      this.inflight = false;
      const next = this.queued;
      this.queued = null;
      if (next !== null) void this.issue(next);
    }
  }

  private show(id: number, blob: Blob, stats: FrameStats) {
    if (id < this.shown) return; // something newer is already on screen
    this.shown = id;
    this.hooks.display(blob, stats);
  }
}
