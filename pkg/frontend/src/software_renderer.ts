/**
 * CPU reference rasterizer: frustum cull, global depth sort, 16x16 tile
 * binning, front-to-back blending with alpha output.
 *
 * This is the host fallback for devices without WebGPU and the conformance
 * surface checked against the reference implementation (same footprint
 * rules: square 3-sigma cutoff, 1/255 alpha floor, 1e-4 early exit).
 */

import type { ViewerScene } from "./decoder.js";
import { CameraPose, viewMatrix } from "./camera.js";

export const DILATION_2D = 0.3;
export const MIP_FILTER_VAR = 0.01;
export const FOOTPRINT_SIGMA = 3.0;
export const ALPHA_FLOOR = 1.0 / 255.0;
export const EXIT_TRANSMITTANCE = 1e-4;
export const NEAR_PLANE = 0.01;
const TILE = 16;

const SH_C0 = 0.28209479177387814;
const SH_C1 = 0.4886025119029199;
const SH_C2 = [1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
  -1.0925484305920792, 0.5462742152960396];
const SH_C3 = [-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
  0.3731763325901154, -0.4570457994644658, 1.445305721320277,
  -0.5900435899266435];

export interface RenderOptions {
  mip: boolean;
}

function evalSh(
  coeffs: Float32Array,
  base: number,
  k: number,
  degree: number,
  x: number,
  y: number,
  z: number,
  channel: number,
): number {
  let v = SH_C0 * coeffs[base + channel];
  if (degree >= 1) {
    v += -SH_C1 * y * coeffs[base + 3 + channel];
    v += SH_C1 * z * coeffs[base + 6 + channel];
    v += -SH_C1 * x * coeffs[base + 9 + channel];
  }
  if (degree >= 2) {
    const xx = x * x, yy = y * y, zz = z * z;
    v += SH_C2[0] * x * y * coeffs[base + 12 + channel];
    v += SH_C2[1] * y * z * coeffs[base + 15 + channel];
    v += SH_C2[2] * (2 * zz - xx - yy) * coeffs[base + 18 + channel];
    v += SH_C2[3] * x * z * coeffs[base + 21 + channel];
    v += SH_C2[4] * (xx - yy) * coeffs[base + 24 + channel];
  }
  if (degree >= 3) {
    const xx = x * x, yy = y * y, zz = z * z;
    v += SH_C3[0] * y * (3 * xx - yy) * coeffs[base + 27 + channel];
    v += SH_C3[1] * x * y * z * coeffs[base + 30 + channel];
    v += SH_C3[2] * y * (4 * zz - xx - yy) * coeffs[base + 33 + channel];
    v += SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy) * coeffs[base + 36 + channel];
    v += SH_C3[4] * x * (4 * zz - xx - yy) * coeffs[base + 39 + channel];
    v += SH_C3[5] * z * (xx - yy) * coeffs[base + 42 + channel];
    v += SH_C3[6] * x * (xx - 3 * yy) * coeffs[base + 45 + channel];
  }
  return Math.max(v + 0.5, 0);
}

export interface ProjectedSplats {
  order: Int32Array; // depth-sorted indices into the arrays below
  meanX: Float64Array;
  meanY: Float64Array;
  conicA: Float64Array;
  conicB: Float64Array;
  conicC: Float64Array;
  colors: Float64Array; // n*3
  alphas: Float64Array;
  radii: Float64Array;
  depths: Float64Array;
  valid: Uint8Array;
}

export function projectSplats(
  scene: ViewerScene,
  camera: CameraPose,
  options: RenderOptions,
): ProjectedSplats {
  const n = scene.count;
  const m = viewMatrix(camera);
  const f = camera.height / (2 * Math.tan(camera.verticalFov / 2));
  const cx = camera.width / 2;
  const cy = camera.height / 2;
  const k = (scene.shDegree + 1) * (scene.shDegree + 1);

  const out: ProjectedSplats = {
    order: new Int32Array(0),
    meanX: new Float64Array(n),
    meanY: new Float64Array(n),
    conicA: new Float64Array(n),
    conicB: new Float64Array(n),
    conicC: new Float64Array(n),
    colors: new Float64Array(n * 3),
    alphas: new Float64Array(n),
    radii: new Float64Array(n),
    depths: new Float64Array(n),
    valid: new Uint8Array(n),
  };

  const keep: number[] = [];
  for (let i = 0; i < n; i++) {
    const px = scene.positions[i * 3];
    const py = scene.positions[i * 3 + 1];
    const pz = scene.positions[i * 3 + 2];
    const tx = m[0] * px + m[1] * py + m[2] * pz + m[3];
    const ty = m[4] * px + m[5] * py + m[6] * pz + m[7];
    const tz = m[8] * px + m[9] * py + m[10] * pz + m[11];
    if (tz <= NEAR_PLANE) continue;

    // normalized quaternion -> rotation, scaled columns
    let qw = scene.rotations[i * 4];
    let qx = scene.rotations[i * 4 + 1];
    let qy = scene.rotations[i * 4 + 2];
    let qz = scene.rotations[i * 4 + 3];
    const qn = Math.hypot(qw, qx, qy, qz) || 1;
    qw /= qn; qx /= qn; qy /= qn; qz /= qn;
    const sx = Math.exp(scene.logScales[i * 3]);
    const sy = Math.exp(scene.logScales[i * 3 + 1]);
    const sz = Math.exp(scene.logScales[i * 3 + 2]);
    const r00 = 1 - 2 * (qy * qy + qz * qz);
    const r01 = 2 * (qx * qy - qw * qz);
    const r02 = 2 * (qx * qz + qw * qy);
    const r10 = 2 * (qx * qy + qw * qz);
    const r11 = 1 - 2 * (qx * qx + qz * qz);
    const r12 = 2 * (qy * qz - qw * qx);
    const r20 = 2 * (qx * qz - qw * qy);
    const r21 = 2 * (qy * qz + qw * qx);
    const r22 = 1 - 2 * (qx * qx + qy * qy);
    // A = R * diag(s); Sigma = A A^T
    const a00 = r00 * sx, a01 = r01 * sy, a02 = r02 * sz;
    const a10 = r10 * sx, a11 = r11 * sy, a12 = r12 * sz;
    const a20 = r20 * sx, a21 = r21 * sy, a22 = r22 * sz;
    const s00 = a00 * a00 + a01 * a01 + a02 * a02;
    const s01 = a00 * a10 + a01 * a11 + a02 * a12;
    const s02 = a00 * a20 + a01 * a21 + a02 * a22;
    const s11 = a10 * a10 + a11 * a11 + a12 * a12;
    const s12 = a10 * a20 + a11 * a21 + a12 * a22;
    const s22 = a20 * a20 + a21 * a21 + a22 * a22;

    // T = J * W (2x3)
    const j00 = f / tz, j02 = (-f * tx) / (tz * tz);
    const j11 = f / tz, j12 = (-f * ty) / (tz * tz);
    const t00 = j00 * m[0] + j02 * m[8];
    const t01 = j00 * m[1] + j02 * m[9];
    const t02 = j00 * m[2] + j02 * m[10];
    const t10 = j11 * m[4] + j12 * m[8];
    const t11 = j11 * m[5] + j12 * m[9];
    const t12 = j11 * m[6] + j12 * m[10];
    // V = T Sigma T^T
    const u0 = t00 * s00 + t01 * s01 + t02 * s02;
    const u1 = t00 * s01 + t01 * s11 + t02 * s12;
    const u2 = t00 * s02 + t01 * s12 + t02 * s22;
    const w0 = t10 * s00 + t11 * s01 + t12 * s02;
    const w1 = t10 * s01 + t11 * s11 + t12 * s12;
    const w2 = t10 * s02 + t11 * s12 + t12 * s22;
    let va = u0 * t00 + u1 * t01 + u2 * t02;
    let vb = u0 * t10 + u1 * t11 + u2 * t12;
    let vc = w0 * t10 + w1 * t11 + w2 * t12;

    let comp = 1.0;
    if (options.mip) {
      const detRaw = va * vc - vb * vb;
      va += MIP_FILTER_VAR;
      vc += MIP_FILTER_VAR;
      const detF = va * vc - vb * vb;
      comp = Math.sqrt(Math.max(detRaw, 0) / Math.max(detF, 1e-300));
    } else {
      va += DILATION_2D;
      vc += DILATION_2D;
    }
    const det = va * vc - vb * vb;
    if (det <= 0) continue;

    const mid = 0.5 * (va + vc);
    const lamMax = mid + Math.sqrt(Math.max(mid * mid - det, 0));
    const radius = FOOTPRINT_SIGMA * Math.sqrt(Math.max(lamMax, 0));
    const mx = (f * tx) / tz + cx;
    const my = (f * ty) / tz + cy;
    if (mx + radius <= 0 || mx - radius >= camera.width ||
        my + radius <= 0 || my - radius >= camera.height) continue;

    const dx = px - camera.position[0];
    const dy = py - camera.position[1];
    const dz = pz - camera.position[2];
    const dn = Math.hypot(dx, dy, dz) || 1;
    const vx = dx / dn, vy = dy / dn, vz = dz / dn;
    for (let c = 0; c < 3; c++) {
      out.colors[i * 3 + c] = evalSh(scene.sh, i * 3 * k, k, scene.shDegree,
        vx, vy, vz, c);
    }
    out.meanX[i] = mx;
    out.meanY[i] = my;
    out.conicA[i] = vc / det;
    out.conicB[i] = -vb / det;
    out.conicC[i] = va / det;
    out.alphas[i] = comp / (1 + Math.exp(-scene.opacityLogits[i]));
    out.radii[i] = radius;
    out.depths[i] = tz;
    out.valid[i] = 1;
    keep.push(i);
  }

  // stable depth sort (ties keep original index order)
  keep.sort((a, b) => out.depths[a] - out.depths[b] || a - b);
  out.order = Int32Array.from(keep);
  return out;
}

/** Render to a premultiplied float RGBA buffer (width*height*4). */
export function renderSoftware(
  scene: ViewerScene,
  camera: CameraPose,
  options: RenderOptions = { mip: false },
): Float64Array {
  const { width, height } = camera;
  const splats = projectSplats(scene, camera, options);
  const out = new Float64Array(width * height * 4);
  const ntx = Math.ceil(width / TILE);
  const nty = Math.ceil(height / TILE);

  // bin depth-ordered splats per tile (order preserved within tiles)
  const tiles: number[][] = Array.from({ length: ntx * nty }, () => []);
  for (const i of splats.order) {
    const r = splats.radii[i];
    const tx0 = Math.max(0, Math.floor((splats.meanX[i] - r - 0.5) / TILE));
    const tx1 = Math.min(ntx - 1, Math.floor((splats.meanX[i] + r - 0.5) / TILE));
    const ty0 = Math.max(0, Math.floor((splats.meanY[i] - r - 0.5) / TILE));
    const ty1 = Math.min(nty - 1, Math.floor((splats.meanY[i] + r - 0.5) / TILE));
    for (let ty = ty0; ty <= ty1; ty++) {
      for (let tx = tx0; tx <= tx1; tx++) {
        tiles[ty * ntx + tx].push(i);
      }
    }
  }

  for (let tile = 0; tile < tiles.length; tile++) {
    const list = tiles[tile];
    if (!list.length) continue;
    const ty = Math.floor(tile / ntx);
    const tx = tile - ty * ntx;
    const y1 = Math.min((ty + 1) * TILE, height);
    const x1 = Math.min((tx + 1) * TILE, width);
    for (let py = ty * TILE; py < y1; py++) {
      for (let px = tx * TILE; px < x1; px++) {
        let t = 1.0;
        let cr = 0, cg = 0, cb = 0;
        for (const i of list) {
          const dx = px + 0.5 - splats.meanX[i];
          const dy = py + 0.5 - splats.meanY[i];
          const r = splats.radii[i];
          if (dx > r || dx < -r || dy > r || dy < -r) continue;
          const power = -0.5 * (splats.conicA[i] * dx * dx
            + splats.conicC[i] * dy * dy) - splats.conicB[i] * dx * dy;
          if (power > 0) continue;
          const a = splats.alphas[i] * Math.exp(power);
          if (a < ALPHA_FLOOR) continue;
          cr += splats.colors[i * 3] * a * t;
          cg += splats.colors[i * 3 + 1] * a * t;
          cb += splats.colors[i * 3 + 2] * a * t;
          t *= 1 - a;
          if (t < EXIT_TRANSMITTANCE) break;
        }
        const o = (py * width + px) * 4;
        out[o] = cr;
        out[o + 1] = cg;
        out[o + 2] = cb;
        out[o + 3] = 1 - t;
      }
    }
  }
  return out;
}
