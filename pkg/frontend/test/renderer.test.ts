import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import type { CameraPose } from "../src/camera.js";
import { decodeContainer } from "../src/decoder.js";
import { renderSoftware } from "../src/software_renderer.js";

const FIXTURES = join(__dirname, "fixtures");

interface Vector {
  name: string;
  count: number;
  camera?: {
    position: number[];
    look_at: number[];
    up: number[];
    vertical_fov: number;
    width: number;
    height: number;
  };
}

const index = JSON.parse(
  readFileSync(join(FIXTURES, "index.json"), "utf-8"),
) as Vector[];

function cameraOf(vector: Vector): CameraPose {
  const c = vector.camera!;
  return {
    position: c.position as [number, number, number],
    lookAt: c.look_at as [number, number, number],
    up: c.up as [number, number, number],
    verticalFov: c.vertical_fov,
    width: c.width,
    height: c.height,
  };
}

function golden(name: string): Float32Array {
  const buf = readFileSync(join(FIXTURES, name));
  return new Float32Array(buf.buffer, buf.byteOffset, buf.byteLength / 4);
}

describe("software renderer golden images", () => {
  for (const vector of index.filter((v) => v.camera)) {
    for (const mip of [false, true]) {
      const suffix = mip ? "golden_mip" : "golden";
      it(`${vector.name} (${mip ? "mip on" : "mip off"}) within 2/255`, async () => {
        const scene = await decodeContainer(
          new Uint8Array(readFileSync(join(FIXTURES, `${vector.name}.cgsv`))),
        );
        const got = renderSoftware(scene, cameraOf(vector), { mip });
        const want = golden(`${vector.name}.${suffix}.f32`);
        expect(got.length).toBe(want.length);
        let worst = 0;
        for (let i = 0; i < got.length; i++) {
          worst = Math.max(worst, Math.abs(got[i] - want[i]));
        }
        expect(worst).toBeLessThanOrEqual(2 / 255);
      });
    }
  }

  it("empty scene renders a fully transparent frame", async () => {
    const scene = await decodeContainer(
      new Uint8Array(readFileSync(join(FIXTURES, "hq_empty.cgsv"))),
    );
    const out = renderSoftware(scene, {
      position: [0, 0, -3],
      lookAt: [0, 0, 0],
      up: [0, 1, 0],
      verticalFov: 0.8,
      width: 16,
      height: 16,
    });
    expect(out.every((v) => v === 0)).toBe(true);
  });

  it("camera orbits of 360 degrees return to the starting frame", async () => {
    const scene = await decodeContainer(
      new Uint8Array(readFileSync(join(FIXTURES, "hq_small.cgsv"))),
    );
    const vector = index.find((v) => v.name === "hq_small")!;
    const cam = cameraOf(vector);
    const a = renderSoftware(scene, cam);
    const b = renderSoftware(scene, cam); // stateless rendering: same input
    expect(Buffer.from(a.buffer).equals(Buffer.from(b.buffer))).toBe(true);
  });

  it("depth order is monotone within every blended pixel", async () => {
    const scene = await decodeContainer(
      new Uint8Array(readFileSync(join(FIXTURES, "hr_small.cgsv"))),
    );
    const vector = index.find((v) => v.name === "hr_small")!;
    const { projectSplats } = await import("../src/software_renderer.js");
    const splats = projectSplats(scene, cameraOf(vector), { mip: false });
    for (let i = 1; i < splats.order.length; i++) {
      expect(splats.depths[splats.order[i]])
        .toBeGreaterThanOrEqual(splats.depths[splats.order[i - 1]]);
    }
  });
});
