/**
 * WebGPU splat renderer: instanced screen-aligned quads, fragment-shader
 * Gaussian falloff, front-to-back blending with alpha output.
 *
 * Projection, frustum culling, and the depth sort run on the host per frame
 * (a compute sort is an optimization, not a semantics change); the GPU
 * consumes the sorted splat buffer. Falls back to software when WebGPU is
 * unavailable (see viewer.ts).
 */

import type { CameraPose } from "./camera.js";
import type { ViewerScene } from "./decoder.js";
import { projectSplats } from "./software_renderer.js";

const SHADER = /* wgsl */ `
struct Splat {
  mean: vec2f,
  conic: vec3f,
  color: vec3f,
  alpha: f32,
  radius: f32,
};

struct Uniforms {
  viewport: vec2f,
};

@group(0) @binding(0) var<storage, read> splats: array<Splat>;
@group(0) @binding(1) var<uniform> uniforms: Uniforms;

struct VertexOut {
  @builtin(position) position: vec4f,
  @location(0) delta: vec2f,
  @location(1) color: vec3f,
  @location(2) alpha: f32,
  @location(3) conic: vec3f,
  @location(4) radius: f32,
};

@vertex
fn vs_main(@builtin(vertex_index) vid: u32,
           @builtin(instance_index) iid: u32) -> VertexOut {
  let splat = splats[iid];
  let corner = vec2f(f32(vid & 1u) * 2.0 - 1.0,
                     f32((vid >> 1u) & 1u) * 2.0 - 1.0);
  let delta = corner * splat.radius;
  let pixel = splat.mean + delta;
  let ndc = vec2f(pixel.x / uniforms.viewport.x * 2.0 - 1.0,
                  1.0 - pixel.y / uniforms.viewport.y * 2.0);
  var out: VertexOut;
  out.position = vec4f(ndc, 0.0, 1.0);
  out.delta = delta;
  out.color = splat.color;
  out.alpha = splat.alpha;
  out.conic = splat.conic;
  out.radius = splat.radius;
  return out;
}

@fragment
fn fs_main(in: VertexOut) -> @location(0) vec4f {
  // square 3-sigma footprint, matching the reference rasterizer
  if (abs(in.delta.x) > in.radius || abs(in.delta.y) > in.radius) {
    discard;
  }
  let power = -0.5 * (in.conic.x * in.delta.x * in.delta.x
                      + in.conic.z * in.delta.y * in.delta.y)
              - in.conic.y * in.delta.x * in.delta.y;
  if (power > 0.0) {
    discard;
  }
  let a = in.alpha * exp(power);
  if (a < 1.0 / 255.0) {
    discard;
  }
  return vec4f(in.color * a, a);
}
`;

const FLOATS_PER_SPLAT = 12; // mean2 + conic3 + color3 + alpha + radius + pad2

export class WebGpuRenderer {
  private device: GPUDevice;
  private context: GPUCanvasContext;
  private pipeline!: GPURenderPipeline;
  private uniformBuffer!: GPUBuffer;
  private splatBuffer: GPUBuffer | null = null;
  private splatCapacity = 0;
  private format: GPUTextureFormat;

  private constructor(device: GPUDevice, context: GPUCanvasContext,
                      format: GPUTextureFormat) {
    this.device = device;
    this.context = context;
    this.format = format;
    this.buildPipeline();
  }

  static async create(canvas: HTMLCanvasElement): Promise<WebGpuRenderer | null> {
    const gpu = navigator.gpu;
    if (!gpu) return null;
    const adapter = await gpu.requestAdapter();
    if (!adapter) return null;
    const device = await adapter.requestDevice();
    const context = canvas.getContext("webgpu") as GPUCanvasContext | null;
    if (!context) return null;
    const format = gpu.getPreferredCanvasFormat();
    context.configure({ device, format, alphaMode: "premultiplied" });
    return new WebGpuRenderer(device, context, format);
  }

  private buildPipeline(): void {
    const module = this.device.createShaderModule({ code: SHADER });
    this.pipeline = this.device.createRenderPipeline({
      layout: "auto",
      vertex: { module, entryPoint: "vs_main" },
      fragment: {
        module,
        entryPoint: "fs_main",
        targets: [{
          format: this.format,
          // front-to-back blending: dst += src * T, T *= 1 - a
          blend: {
            color: { srcFactor: "one-minus-dst-alpha", dstFactor: "one" },
            alpha: { srcFactor: "one-minus-dst-alpha", dstFactor: "one" },
          },
        }],
      },
      primitive: { topology: "triangle-strip" },
    });
    this.uniformBuffer = this.device.createBuffer({
      size: 16,
      usage: GPUBufferUsage.UNIFORM | GPUBufferUsage.COPY_DST,
    });
  }

  /** Rebuild pipelines after a device loss; scene buffers are re-uploaded
   * on the next frame. */
  reinitialize(): void {
    this.splatBuffer = null;
    this.splatCapacity = 0;
    this.buildPipeline();
  }

  render(scene: ViewerScene, camera: CameraPose, mip: boolean): void {
    const splats = projectSplats(scene, camera, { mip });
    const n = splats.order.length;
    const data = new Float32Array(Math.max(n, 1) * FLOATS_PER_SPLAT);
    for (let s = 0; s < n; s++) {
      const i = splats.order[s];
      const o = s * FLOATS_PER_SPLAT;
      data[o] = splats.meanX[i];
      data[o + 1] = splats.meanY[i];
      data[o + 2] = splats.conicA[i];
      data[o + 3] = splats.conicB[i];
      data[o + 4] = splats.conicC[i];
      data[o + 5] = splats.colors[i * 3];
      data[o + 6] = splats.colors[i * 3 + 1];
      data[o + 7] = splats.colors[i * 3 + 2];
      data[o + 8] = splats.alphas[i];
      data[o + 9] = splats.radii[i];
    }
    if (!this.splatBuffer || this.splatCapacity < data.byteLength) {
      this.splatBuffer?.destroy();
      this.splatBuffer = this.device.createBuffer({
        size: data.byteLength,
        usage: GPUBufferUsage.STORAGE | GPUBufferUsage.COPY_DST,
      });
      this.splatCapacity = data.byteLength;
    }
    this.device.queue.writeBuffer(this.splatBuffer, 0, data);
    this.device.queue.writeBuffer(this.uniformBuffer, 0,
      new Float32Array([camera.width, camera.height, 0, 0]));

    const bindGroup = this.device.createBindGroup({
      layout: this.pipeline.getBindGroupLayout(0),
      entries: [
        { binding: 0, resource: { buffer: this.splatBuffer } },
        { binding: 1, resource: { buffer: this.uniformBuffer } },
      ],
    });
    const encoder = this.device.createCommandEncoder();
    const pass = encoder.beginRenderPass({
      colorAttachments: [{
        view: this.context.getCurrentTexture().createView(),
        clearValue: { r: 0, g: 0, b: 0, a: 0 },
        loadOp: "clear",
        storeOp: "store",
      }],
    });
    pass.setPipeline(this.pipeline);
    pass.setBindGroup(0, bindGroup);
    if (n > 0) pass.draw(4, n);
    pass.end();
    this.device.queue.submit([encoder.finish()]);
  }
}
