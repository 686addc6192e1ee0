/**
 * Viewer application: canvas, input wiring, scene switching, HUD.
 *
 * Containers arrive over HTTP (?scene=a.cgsv,b.cgsv) or the file picker;
 * decoding runs in a worker; rendering prefers WebGPU and falls back to the
 * software rasterizer on a 2D canvas.
 */

import {
  defaultOrbit,
  orbitCamera,
  reduceViewer,
  type ViewerState,
} from "./camera.js";
import type { ViewerScene } from "./decoder.js";
import { renderSoftware } from "./software_renderer.js";
import { WebGpuRenderer } from "./webgpu_renderer.js";

interface LoadedScene {
  label: string;
  scene: ViewerScene;
}

export class ViewerApp {
  private canvas: HTMLCanvasElement;
  private hud: HTMLElement;
  private banner: HTMLElement;
  private scenes: LoadedScene[] = [];
  private state: ViewerState;
  private gpu: WebGpuRenderer | null = null;
  private ctx2d: CanvasRenderingContext2D | null = null;
  private worker: Worker;
  private requestId = 0;
  private pending = new Map<number, { label: string }>();
  private frames = 0;
  private lastFpsTime = performance.now();
  private fps = 0;
  private needsRedraw = true;

  constructor(canvas: HTMLCanvasElement, hud: HTMLElement, banner: HTMLElement) {
    this.canvas = canvas;
    this.hud = hud;
    this.banner = banner;
    this.state = {
      orbit: defaultOrbit([-1, -1, -1], [1, 1, 1]),
      sceneCount: 0,
      activeScene: 0,
      mip: false,
    };
    this.worker = new Worker(new URL("./decode_worker.js", import.meta.url),
      { type: "module" });
    this.worker.onmessage = (ev) => this.onDecoded(ev.data);
    this.bindInput();
  }

  async start(): Promise<void> {
    this.gpu = await WebGpuRenderer.create(this.canvas);
    if (!this.gpu) {
      this.ctx2d = this.canvas.getContext("2d");
      this.showBanner("WebGPU unavailable: using the software renderer", false);
    }
    const params = new URLSearchParams(location.search);
    const urls = params.get("scene");
    if (urls) {
      for (const url of urls.split(",")) void this.loadUrl(url.trim());
    }
    const loop = () => {
      this.drawFrame();
      requestAnimationFrame(loop);
    };
    requestAnimationFrame(loop);
  }

  async loadUrl(url: string): Promise<void> {
    try {
      const resp = await fetch(url);
      if (!resp.ok) throw new Error(`HTTP ${resp.status}`);
      this.submitDecode(url.split("/").pop() ?? url, await resp.arrayBuffer());
    } catch (err) {
      this.showBanner(`failed to fetch ${url}: ${String(err)}`, true);
    }
  }

  loadFile(file: File): void {
    void file.arrayBuffer().then((buf) => this.submitDecode(file.name, buf));
  }

  private submitDecode(label: string, bytes: ArrayBuffer): void {
    const id = ++this.requestId;
    this.pending.set(id, { label });
    this.worker.postMessage({ id, bytes }, [bytes]);
  }

  private onDecoded(msg: { id: number; ok: boolean; scene?: ViewerScene;
                           message?: string }): void {
    const req = this.pending.get(msg.id);
    this.pending.delete(msg.id);
    if (!req) return;
    if (!msg.ok || !msg.scene) {
      this.showBanner(`${req.label}: ${msg.message ?? "decode failed"}`, true);
      return;
    }
    this.scenes.push({ label: req.label, scene: msg.scene });
    this.state = {
      ...this.state,
      sceneCount: this.scenes.length,
      activeScene: this.scenes.length - 1,
      orbit: defaultOrbit(msg.scene.bboxLo, msg.scene.bboxHi),
    };
    this.showBanner(`${req.label}: ${msg.scene.count} splats `
      + `(${msg.scene.profile}, SH degree ${msg.scene.shDegree})`, false);
    this.needsRedraw = true;
  }

  private bindInput(): void {
    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    this.canvas.addEventListener("pointerdown", (ev) => {
      dragging = true;
      lastX = ev.clientX;
      lastY = ev.clientY;
      this.canvas.setPointerCapture(ev.pointerId);
    });
    this.canvas.addEventListener("pointerup", () => (dragging = false));
    this.canvas.addEventListener("pointermove", (ev) => {
      if (!dragging) return;
      this.dispatch({ kind: "drag", dx: ev.clientX - lastX,
                      dy: ev.clientY - lastY });
      lastX = ev.clientX;
      lastY = ev.clientY;
    });
    this.canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.dispatch({ kind: "wheel", delta: ev.deltaY });
    }, { passive: false });
    window.addEventListener("keydown", (ev) => {
      if (ev.key === "[") this.dispatch({ kind: "previous-scene" });
      else if (ev.key === "]") this.dispatch({ kind: "next-scene" });
      else if (ev.key.toLowerCase() === "m") this.dispatch({ kind: "toggle-mip" });
    });
  }

  private dispatch(action: Parameters<typeof reduceViewer>[1]): void {
    this.state = reduceViewer(this.state, action);
    this.needsRedraw = true;
  }

  private showBanner(text: string, isError: boolean): void {
    this.banner.textContent = text;
    this.banner.className = isError ? "banner error" : "banner";
  }

  private drawFrame(): void {
    const active = this.scenes[this.state.activeScene];
    if (!active || !this.needsRedraw) return;
    this.needsRedraw = this.gpu === null ? false : this.needsRedraw;
    const camera = orbitCamera(this.state.orbit, this.canvas.width,
                               this.canvas.height);
    if (this.gpu) {
      this.gpu.render(active.scene, camera, this.state.mip);
      this.needsRedraw = false;
    } else if (this.ctx2d) {
      const rgba = renderSoftware(active.scene, camera,
                                  { mip: this.state.mip });
      const img = this.ctx2d.createImageData(camera.width, camera.height);
      for (let p = 0; p < camera.width * camera.height; p++) {
        const checker = ((p % camera.width >> 4) + ((p / camera.width) >> 4))
          & 1 ? 200 : 160;
        const a = Math.min(rgba[p * 4 + 3], 1);
        for (let c = 0; c < 3; c++) {
          const lin = Math.min(rgba[p * 4 + c], 1);
          img.data[p * 4 + c] = Math.round(255 * Math.min(
            lin + (checker / 255) * (1 - a), 1));
        }
        img.data[p * 4 + 3] = 255;
      }
      this.ctx2d.putImageData(img, 0, 0);
      this.needsRedraw = false;
    }
    this.frames += 1;
    const now = performance.now();
    if (now - this.lastFpsTime >= 1000) {
      this.fps = (this.frames * 1000) / (now - this.lastFpsTime);
      this.frames = 0;
      this.lastFpsTime = now;
    }
    this.hud.textContent = [
      active ? `${active.label} (${this.state.activeScene + 1}/`
        + `${this.scenes.length})` : "no scene",
      `${active.scene.count} splats`,
      `mip ${this.state.mip ? "on" : "off"} [m]`,
      `${this.fps.toFixed(0)} fps`,
      this.gpu ? "webgpu" : "software",
    ].join(" | ");
  }
}
