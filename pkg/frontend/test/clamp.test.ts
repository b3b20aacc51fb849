import { describe, expect, it } from "vitest";

import { clampState, snapResolution, wrapYaw,
         DISTANCE_RANGE, FOV_RANGE, PITCH_LIMIT } from "../src/clamp";
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

function some(over: Partial<ViewerState> = {}): ViewerState {
  return {
    yaw: 0, pitch: 0, distance: 2.6, fov: 35,
    psi: new Array(meta.n_psi).fill(0),
    theta: new Array(meta.n_theta).fill(0),
    resolution: 256,
    ...over,
  };
}

describe("clampState", () => {
  it("clamps slider values to the advertised range", () => {
    const psi = some().psi;
    psi[0] = 5;
    psi[1] = -7;
    psi[2] = 2.5;
    const c = clampState(some({ psi }), meta);
    expect(c.psi[0]).toBe(3);
    expect(c.psi[1]).toBe(-3);
    expect(c.psi[2]).toBe(2.5);
  });

  it("replaces non-finite values instead of sending them", () => {
    const theta = some().theta;
    theta[3] = NaN;
    theta[4] = Infinity;
    const c = clampState(some({ theta, yaw: NaN }), meta);
    expect(Number.isFinite(c.theta[3])).toBe(true);
    expect(Number.isFinite(c.theta[4])).toBe(true);
    expect(Number.isFinite(c.yaw)).toBe(true);
  });

  it("bounds camera fields", () => {
    const c = clampState(some({ pitch: 200, distance: 0, fov: 500 }), meta);
    expect(c.pitch).toBe(PITCH_LIMIT);
    expect(c.distance).toBe(DISTANCE_RANGE[0]);
    expect(c.fov).toBe(FOV_RANGE[1]);
  });

  it("snaps the resolution to the advertised list", () => {
    expect(clampState(some({ resolution: 300 }), meta).resolution).toBe(256);
    expect(clampState(some({ resolution: 9999 }), meta).resolution).toBe(512);
    expect(clampState(some({ resolution: -4 }), meta).resolution).toBe(128);
  });

  it("keeps any wild state inside the ranges", () => {
    let seed = 1234;
    const rand = () => {
      // xorshift, good enough to fuzz
      seed ^= seed << 13; seed ^= seed >> 17; seed ^= seed << 5;
      return (seed >>> 0) / 0xffffffff;
    };
    const wild = () => (rand() - 0.5) * 2000;
    for (let trial = 0; trial < 200; trial++) {
      const state = some({
        yaw: wild(), pitch: wild(), distance: wild(), fov: wild(),
        psi: new Array(meta.n_psi).fill(0).map(wild),
        theta: new Array(meta.n_theta).fill(0).map(wild),
        resolution: Math.round(wild()),
      });
      const c = clampState(state, meta);
      expect(c.yaw).toBeGreaterThanOrEqual(-180);
      expect(c.yaw).toBeLessThanOrEqual(180);
      expect(Math.abs(c.pitch)).toBeLessThanOrEqual(PITCH_LIMIT);
      expect(c.distance).toBeGreaterThanOrEqual(DISTANCE_RANGE[0]);
      expect(c.distance).toBeLessThanOrEqual(DISTANCE_RANGE[1]);
      expect(c.fov).toBeGreaterThanOrEqual(FOV_RANGE[0]);
      expect(c.fov).toBeLessThanOrEqual(FOV_RANGE[1]);
      for (const v of [...c.psi, ...c.theta]) {
        expect(v).toBeGreaterThanOrEqual(-3);
        expect(v).toBeLessThanOrEqual(3);
      }
      expect(meta.resolutions).toContain(c.resolution);
    }
  });
});

describe("wrapYaw", () => {
  it("wraps long drags into one turn", () => {
    expect(wrapYaw(0)).toBe(0);
    expect(wrapYaw(190)).toBe(-170);
    expect(wrapYaw(-190)).toBe(170);
    expect(wrapYaw(540)).toBe(-180);
    expect(wrapYaw(360)).toBe(0);
  });
});

describe("snapResolution", () => {
  it("prefers the smaller entry on ties", () => {
    expect(snapResolution(192, [128, 256, 512])).toBe(128);
  });
});
