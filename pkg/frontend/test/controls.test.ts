import { describe, expect, it } from "vitest";

import {
  PITCH_LIMIT,
  applyDrag,
  applyWheel,
  defaultOrbit,
  orbitCamera,
  reduceViewer,
  viewMatrix,
  type ViewerState,
} from "../src/camera.js";

function baseState(): ViewerState {
  return {
    orbit: defaultOrbit([-1, -1, -1], [1, 1, 1]),
    sceneCount: 3,
    activeScene: 0,
    mip: false,
  };
}

describe("orbit controls", () => {
  it("zero-delta drag leaves the state unchanged", () => {
    const s = defaultOrbit([-1, -1, -1], [1, 1, 1]);
    expect(applyDrag(s, 0, 0)).toBe(s);
  });

  it("drag changes yaw and pitch, pitch stays clamped", () => {
    let s = defaultOrbit([-1, -1, -1], [1, 1, 1]);
    for (let i = 0; i < 10_000; i++) s = applyDrag(s, 3, 7);
    expect(s.pitch).toBeLessThanOrEqual(PITCH_LIMIT);
    expect(s.pitch).toBeGreaterThan(-PITCH_LIMIT - 1e-12);
  });

  it("equal and opposite wheel events restore the distance", () => {
    const s = defaultOrbit([-1, -1, -1], [1, 1, 1]);
    const out = applyWheel(applyWheel(s, 240), -240);
    expect(Math.abs(out.distance - s.distance)).toBeLessThanOrEqual(1e-6);
  });

  it("wheel zoom is exponential and never collapses", () => {
    let s = defaultOrbit([-1, -1, -1], [1, 1, 1]);
    for (let i = 0; i < 500; i++) s = applyWheel(s, -1000);
    expect(s.distance).toBeGreaterThan(0);
  });

  it("orbit camera keeps the target at the view center", () => {
    const s = defaultOrbit([-1, -1, -1], [1, 1, 1]);
    const cam = orbitCamera(s, 64, 64);
    const m = viewMatrix(cam);
    // target in camera space: x=y=0, z = distance
    const [tx, ty, tz] = cam.lookAt;
    const cx = m[0] * tx + m[1] * ty + m[2] * tz + m[3];
    const cy = m[4] * tx + m[5] * ty + m[6] * tz + m[7];
    const cz = m[8] * tx + m[9] * ty + m[10] * tz + m[11];
    expect(Math.abs(cx)).toBeLessThan(1e-9);
    expect(Math.abs(cy)).toBeLessThan(1e-9);
    expect(Math.abs(cz - s.distance)).toBeLessThan(1e-9);
  });
});

describe("viewer state reducer", () => {
  it("cycles scenes forward and backward", () => {
    let s = baseState();
    s = reduceViewer(s, { kind: "next-scene" });
    expect(s.activeScene).toBe(1);
    s = reduceViewer(s, { kind: "next-scene" });
    s = reduceViewer(s, { kind: "next-scene" });
    expect(s.activeScene).toBe(0);
    s = reduceViewer(s, { kind: "previous-scene" });
    expect(s.activeScene).toBe(2);
  });

  it("scene cycling with no scenes is a no-op", () => {
    const s = { ...baseState(), sceneCount: 0 };
    expect(reduceViewer(s, { kind: "next-scene" })).toBe(s);
  });

  it("mip toggle flips the flag", () => {
    let s = baseState();
    s = reduceViewer(s, { kind: "toggle-mip" });
    expect(s.mip).toBe(true);
    s = reduceViewer(s, { kind: "toggle-mip" });
    expect(s.mip).toBe(false);
  });

  it("drag and wheel route to the orbit state", () => {
    let s = baseState();
    const d0 = s.orbit.distance;
    s = reduceViewer(s, { kind: "wheel", delta: -500 });
    expect(s.orbit.distance).toBeLessThan(d0);
    const y0 = s.orbit.yaw;
    s = reduceViewer(s, { kind: "drag", dx: 10, dy: 0 });
    expect(s.orbit.yaw).not.toBe(y0);
  });
});
