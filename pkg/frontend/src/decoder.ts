/**
 * CGSV container decoder.
 *
 * Mirrors the byte layout in docs/format.md and is bit-conformant with the
 * reference decoder: dequantization happens in f64 and rounds once to f32,
 * fp16 positions and codebook entries expand exactly.
 */

import { crc32 } from "./crc32.js";
import { inflateRaw } from "./inflate.js";

export interface ViewerScene {
  count: number;
  shDegree: number;
  bboxLo: Float32Array;
  bboxHi: Float32Array;
  profile: "HQ" | "HR";
  positions: Float32Array; // n*3
  rotations: Float32Array; // n*4 (w, x, y, z), normalized at use
  logScales: Float32Array; // n*3
  opacityLogits: Float32Array; // n
  sh: Float32Array; // n*K*3, coefficient-major, rgb inner
}

export class CorruptContainerError extends Error {}

const MAGIC = 0x56534743; // "CGSV" little-endian
const VERSION = 1;
const MAX_CODEBOOK = 4096;

interface ChunkRecord {
  id: string;
  offset: number;
  compLen: number;
  rawLen: number;
  crc: number;
}

function fail(message: string): never {
  throw new CorruptContainerError(message);
}

/** Expand IEEE754 binary16 bits to a JS number (f64). */
export function halfToNumber(bits: number): number {
  const sign = bits & 0x8000 ? -1 : 1;
  const exp = (bits >> 10) & 0x1f;
  const frac = bits & 0x3ff;
  if (exp === 0) return sign * frac * 2 ** -24;
  if (exp === 31) return frac ? Number.NaN : sign * Infinity;
  return sign * (1024 + frac) * 2 ** (exp - 25);
}

function readName(view: DataView, offset: number): string {
  let out = "";
  for (let i = 0; i < 4; i++) {
    const c = view.getUint8(offset + i);
    if (c !== 0) out += String.fromCharCode(c);
  }
  return out;
}

/** Undo per-plane delta coding: running sum mod 256 within each plane. */
function undelta(raw: Uint8Array, n: number, comps: number): Uint8Array {
  const out = new Uint8Array(raw.length);
  for (let c = 0; c < comps; c++) {
    let acc = 0;
    for (let i = 0; i < n; i++) {
      acc = (acc + raw[c * n + i]) & 0xff;
      out[c * n + i] = acc;
    }
  }
  return out;
}

/** Planar delta-coded codes -> interleaved dequantized values. */
function dequantPlanar(
  rawDelta: Uint8Array,
  n: number,
  comps: number,
  vmin: number,
  vmax: number,
): Float32Array {
  const raw = undelta(rawDelta, n, comps);
  const out = new Float32Array(n * comps);
  for (let c = 0; c < comps; c++) {
    for (let i = 0; i < n; i++) {
      const u = raw[c * n + i] / 255.0;
      out[i * comps + c] = Math.fround(vmin * (1.0 - u) + vmax * u);
    }
  }
  return out;
}

export async function decodeContainer(bytes: Uint8Array): Promise<ViewerScene> {
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  if (bytes.length < 52 || view.getUint32(0, true) !== MAGIC) fail("bad magic");
  if (view.getUint32(4, true) !== VERSION) fail("unsupported version");
  const headerCrc = view.getUint32(8, true);
  const profileId = view.getUint8(12);
  if (profileId !== 0 && profileId !== 1) fail("unknown profile");
  const count = view.getUint32(16, true);
  const shDegree = view.getUint32(20, true);
  if (shDegree > 3) fail("sh_degree out of range");
  const bboxLo = new Float32Array(3);
  const bboxHi = new Float32Array(3);
  for (let i = 0; i < 3; i++) {
    bboxLo[i] = view.getFloat32(24 + 4 * i, true);
    bboxHi[i] = view.getFloat32(36 + 4 * i, true);
  }

  let off = 48;
  const nGroups = view.getUint32(off, true);
  off += 4;
  if (nGroups > 16) fail("implausible group count");
  const groups = new Map<string, [number, number]>();
  for (let g = 0; g < nGroups; g++) {
    if (off + 20 > bytes.length) fail("truncated group table");
    groups.set(readName(view, off), [
      view.getFloat64(off + 4, true),
      view.getFloat64(off + 12, true),
    ]);
    off += 20;
  }
  if (off + 4 > bytes.length) fail("truncated chunk count");
  const nChunks = view.getUint32(off, true);
  off += 4;
  if (nChunks > 64) fail("implausible chunk count");
  const chunks: ChunkRecord[] = [];
  for (let c = 0; c < nChunks; c++) {
    if (off + 32 > bytes.length) fail("truncated chunk table");
    const id = readName(view, off);
    const offsetLo = view.getUint32(off + 4, true);
    const offsetHi = view.getUint32(off + 8, true);
    const compLo = view.getUint32(off + 12, true);
    const compHi = view.getUint32(off + 16, true);
    const rawLo = view.getUint32(off + 20, true);
    const rawHi = view.getUint32(off + 24, true);
    chunks.push({
      id,
      offset: offsetHi * 2 ** 32 + offsetLo,
      compLen: compHi * 2 ** 32 + compLo,
      rawLen: rawHi * 2 ** 32 + rawLo,
      crc: view.getUint32(off + 28, true),
    });
    off += 32;
  }

  // header CRC covers [0, 8) + four zero bytes + [12, end of chunk table)
  const headBytes = new Uint8Array(off);
  headBytes.set(bytes.subarray(0, off));
  headBytes[8] = headBytes[9] = headBytes[10] = headBytes[11] = 0;
  if (crc32(headBytes) !== headerCrc) fail("header CRC mismatch");

  let end = off;
  for (const chunk of chunks) {
    if (chunk.offset !== end) fail("chunks must be contiguous");
    end = chunk.offset + chunk.compLen;
    if (end > bytes.length) fail("chunk exceeds file size");
  }
  if (end !== bytes.length) fail("trailing bytes after last chunk");

  const raw = new Map<string, Uint8Array>();
  for (const chunk of chunks) {
    const blob = bytes.subarray(chunk.offset, chunk.offset + chunk.compLen);
    if (crc32(blob) !== chunk.crc) fail(`chunk ${chunk.id} CRC mismatch`);
    let inflated: Uint8Array;
    try {
      inflated = await inflateRaw(blob);
    } catch {
      fail(`chunk ${chunk.id} inflate failed`);
    }
    if (inflated.length !== chunk.rawLen) fail(`chunk ${chunk.id} raw length mismatch`);
    raw.set(chunk.id, inflated);
  }

  const expect = (id: string, length: number): Uint8Array => {
    const data = raw.get(id);
    if (!data) fail(`missing chunk ${id}`);
    if (data.length !== length) fail(`chunk ${id} has wrong size`);
    return data;
  };

  // positions: six delta-coded byte planes of fp16 (x/y/z low, then high)
  const posPlanes = undelta(expect("POS", 6 * count), count, 6);
  const positions = new Float32Array(count * 3);
  for (let axis = 0; axis < 3; axis++) {
    const lo = bboxLo[axis];
    const span = Math.max(bboxHi[axis] - lo, 1e-12);
    for (let i = 0; i < count; i++) {
      const bits = posPlanes[axis * count + i] | (posPlanes[(axis + 3) * count + i] << 8);
      positions[i * 3 + axis] = Math.fround(lo + halfToNumber(bits) * span);
    }
  }

  const groupOf = (name: string): [number, number] => {
    const g = groups.get(name);
    if (!g) fail(`missing group metadata ${name}`);
    return g;
  };

  const [oMin, oMax] = groupOf("opac");
  const opacityLogits = dequantPlanar(expect("OPA", count), count, 1, oMin, oMax);

  const kc = (shDegree + 1) * (shDegree + 1);
  let rotations: Float32Array;
  let logScales: Float32Array;
  let sh: Float32Array;
  if (profileId === 0) {
    const [rMin, rMax] = groupOf("rotq");
    rotations = dequantPlanar(expect("ROT", 4 * count), count, 4, rMin, rMax);
    const [sMin, sMax] = groupOf("lsca");
    logScales = dequantPlanar(expect("SCL", 3 * count), count, 3, sMin, sMax);
    const [hMin, hMax] = groupOf("shco");
    sh = dequantPlanar(expect("SH", 3 * kc * count), count, 3 * kc, hMin, hMax);
  } else {
    const [cbSh, idxSh] = readCodebook(raw, "CBSH", "IXSH", count, 3 * kc);
    const [cbCv, idxCv] = readCodebook(raw, "CBCV", "IXCV", count, 7);
    sh = new Float32Array(count * 3 * kc);
    rotations = new Float32Array(count * 4);
    logScales = new Float32Array(count * 3);
    for (let i = 0; i < count; i++) {
      sh.set(cbSh.subarray(idxSh[i] * 3 * kc, (idxSh[i] + 1) * 3 * kc), i * 3 * kc);
      const base = idxCv[i] * 7;
      rotations[i * 4] = cbCv[base];
      rotations[i * 4 + 1] = cbCv[base + 1];
      rotations[i * 4 + 2] = cbCv[base + 2];
      rotations[i * 4 + 3] = cbCv[base + 3];
      logScales[i * 3] = cbCv[base + 4];
      logScales[i * 3 + 1] = cbCv[base + 5];
      logScales[i * 3 + 2] = cbCv[base + 6];
    }
  }

  return {
    count,
    shDegree,
    bboxLo,
    bboxHi,
    profile: profileId === 0 ? "HQ" : "HR",
    positions,
    rotations,
    logScales,
    opacityLogits,
    sh,
  };
}

function readCodebook(
  raw: Map<string, Uint8Array>,
  cbId: string,
  ixId: string,
  n: number,
  dim: number,
): [Float32Array, Uint32Array] {
  const blob = raw.get(cbId);
  const ixBlob = raw.get(ixId);
  if (!blob || !ixBlob) fail(`missing codebook chunk ${cbId}`);
  if (blob.length < 8) fail(`chunk ${cbId} too short`);
  const view = new DataView(blob.buffer, blob.byteOffset, blob.byteLength);
  const entries = view.getUint32(0, true);
  const gotDim = view.getUint32(4, true);
  if (gotDim !== dim || entries < 1 || entries > MAX_CODEBOOK) {
    fail(`chunk ${cbId} has bad geometry`);
  }
  if (blob.length !== 8 + entries * dim * 2) fail(`chunk ${cbId} has wrong size`);
  // f16 entries as 2*dim delta-coded byte planes (low planes, high planes)
  const planes = undelta(blob.subarray(8), entries, 2 * dim);
  const cb = new Float32Array(entries * dim);
  for (let e = 0; e < entries; e++) {
    for (let d = 0; d < dim; d++) {
      const bits = planes[d * entries + e] | (planes[(dim + d) * entries + e] << 8);
      cb[e * dim + d] = Math.fround(halfToNumber(bits));
    }
  }
  const width = entries <= 256 ? 1 : 2;
  if (ixBlob.length !== width * n) fail(`chunk ${ixId} has wrong size`);
  const ixPlanes = undelta(ixBlob, n, width);
  const idx = new Uint32Array(n);
  for (let i = 0; i < n; i++) {
    idx[i] = width === 1 ? ixPlanes[i] : ixPlanes[i] | (ixPlanes[n + i] << 8);
  }
  for (let i = 0; i < n; i++) {
    if (idx[i] >= entries) fail("codebook index out of range");
  }
  return [cb, idx];
}
