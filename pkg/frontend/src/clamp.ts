import type { Meta, ViewerState } from "./types";

export const PITCH_LIMIT = 85;
export const DISTANCE_RANGE: [number, number] = [0.3, 10];
export const FOV_RANGE: [number, number] = [10, 120];

function clip(v: number, lo: number, hi: number): number {
  if (!Number.isFinite(v)) return lo;
  return Math.min(hi, Math.max(lo, v));
}

/** wrap into [-180, 180) so a long drag never grows unbounded */
export function wrapYaw(yaw: number): number {
  if (!Number.isFinite(yaw)) return 0;
  const w = ((yaw + 180) % 360 + 360) % 360 - 180;
  return w;
}

/** nearest entry of the advertised resolution list, ties toward the smaller */
export function snapResolution(res: number, allowed: number[]): number {
  let best = allowed[0];
  for (const r of allowed) {
    if (Math.abs(r - res) < Math.abs(best - res)) best = r;
  }
  return best;
}

/**
 * Force a state into the ranges /meta advertises. Every request body is
 * built from a clamped state, so out-of-range values never reach the wire.
 */
export function clampState(state: ViewerState, meta: Meta): ViewerState {
  const [lo, hi] = meta.slider_range;
  return {
    yaw: wrapYaw(state.yaw),
    pitch: clip(state.pitch, -PITCH_LIMIT, PITCH_LIMIT),
    distance: clip(state.distance, DISTANCE_RANGE[0], DISTANCE_RANGE[1]),
    fov: clip(state.fov, FOV_RANGE[0], FOV_RANGE[1]),
    psi: state.psi.map((v) => clip(v, lo, hi)),
    theta: state.theta.map((v) => clip(v, lo, hi)),
    resolution: snapResolution(state.resolution, meta.resolutions),
  };
}
